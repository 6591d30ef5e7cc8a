"""Uniform-grid fields, discrete calculus, Poisson solvers and snapshots."""
