"""Full-plane Euler reference solver and its diagnostics."""
