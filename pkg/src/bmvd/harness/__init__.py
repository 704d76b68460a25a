"""Verification campaigns and the command-line entry point."""
