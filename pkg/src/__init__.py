"""
Perforated Flow Lab
Numerical experiments on the vanishing-viscosity limit of 2D flows around a
lattice of shrinking obstacles.
"""

__version__ = "0.1.0"
