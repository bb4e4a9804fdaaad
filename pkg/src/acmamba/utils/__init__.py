"""Utility helpers for acmamba."""
