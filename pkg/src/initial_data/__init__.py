"""Corrected initial velocity around the obstacles and its convergence rate."""
