"""Truncated realized variation and debiased volatility estimators."""
