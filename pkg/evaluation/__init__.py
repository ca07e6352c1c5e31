"""Evaluation utilities for volscope Monte Carlo studies."""
