"""Penalized Navier-Stokes solver in the perforated box."""
