"""
acmamba test package.

This package contains tests for the acmamba detector and its pipeline.
"""
