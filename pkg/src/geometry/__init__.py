"""Perforated lattice geometry and rasterized region masks."""
