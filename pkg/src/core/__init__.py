"""
Core Business Logic Package

This package contains ingestion, graph scoring, featurization, the mixture
model, ranking, and the synthetic evaluation studies.
"""
