"""Cutoff functions for the perforated lattice."""
