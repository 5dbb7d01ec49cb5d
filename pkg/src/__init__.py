"""
PushMix - Source Package

Complementary product recommendation for push notifications: graph-based
complementarity scoring and a mixture of logistic experts trained with EM.
"""

__version__ = "1.0.0"
