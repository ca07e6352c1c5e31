"""Fourier-inversion oracle for truncated moments and their expansions."""
