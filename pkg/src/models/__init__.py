"""
Models Package

This package contains the domain types: events, feature schema and model parameters.
"""
