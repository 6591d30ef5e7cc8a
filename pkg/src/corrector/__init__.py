"""Reference cell divergence problem and the Euler boundary-layer corrector."""
