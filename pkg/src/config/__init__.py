"""
Configuration Package

This package contains application configuration and settings.
"""