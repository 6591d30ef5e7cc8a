"""Convergence study harness and command line."""
