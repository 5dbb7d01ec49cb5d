"""
Utilities Package

This package contains utility functions and helper modules.
"""