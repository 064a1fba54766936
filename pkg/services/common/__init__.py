"""Shared logging helpers for the depth sampling services."""
