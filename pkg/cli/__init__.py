"""Command-line entry point for volscope experiments."""
