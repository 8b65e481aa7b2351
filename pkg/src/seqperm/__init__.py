"""Anytime-valid sequential permutation p-values for multiple testing."""

__version__ = "0.1.0"
