"""
Lattice cutoff phi^eps = 1 - sum_ij phi_ij and its scaling check.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.cutoff.profiles import CutoffProfile, ProfileKind, obstacle_cutoff
from src.errors import UnsupportedShapeError
from src.fields.calculus import lp_norm
from src.fields.grid import Grid, ScalarField, VectorField
from src.geometry.lattice import Geometry
from src.geometry.masks import require_resolution

logger = logging.getLogger(__name__)


def _resolve_profile(geometry: Geometry, profile: Optional[CutoffProfile]) -> CutoffProfile:
    profile = profile or CutoffProfile.smoothstep()
    if profile.kind is ProfileKind.HARMONIC and not geometry.shape.is_disk:
        raise UnsupportedShapeError("The harmonic cutoff vanishes on the obstacle only for disk obstacles")
    return profile


def _accumulate(geometry: Geometry, grid: Grid, profile: Optional[CutoffProfile]) -> Tuple[np.ndarray, np.ndarray]:
    """Sum of the obstacle cutoffs and of their gradients over the grid nodes."""
    require_resolution(geometry, grid)
    profile = _resolve_profile(geometry, profile)
    total = np.zeros(grid.shape)
    total_grad = np.zeros((2,) + grid.shape)
    reach = profile.support_radius(geometry.epsilon)
    for cx, cy in geometry.centers:
        rows, cols = grid.window((cx - reach, cy - reach), (cx + reach, cy + reach))
        X, Y = np.meshgrid(grid.x[cols], grid.y[rows], indexing="xy")
        value, gradient = obstacle_cutoff(np.stack([X, Y], axis=-1), (cx, cy), geometry.epsilon, profile)
        total[rows, cols] += value
        total_grad[:, rows, cols] += np.moveaxis(gradient, -1, 0)
    return total, total_grad


def lattice_cutoff(geometry: Geometry, grid: Grid, profile: Optional[CutoffProfile] = None) -> ScalarField:
    total, _ = _accumulate(geometry, grid, profile)
    return ScalarField(grid, 1.0 - total)


def lattice_cutoff_gradient(geometry: Geometry, grid: Grid, profile: Optional[CutoffProfile] = None) -> VectorField:
    """Analytic gradient of phi^eps."""
    _, total_grad = _accumulate(geometry, grid, profile)
    return VectorField(grid, -total_grad)


def lattice_cutoff_with_gradient(
    geometry: Geometry, grid: Grid, profile: Optional[CutoffProfile] = None
) -> Tuple[ScalarField, VectorField]:
    total, total_grad = _accumulate(geometry, grid, profile)
    return ScalarField(grid, 1.0 - total), VectorField(grid, -total_grad)


def cutoff_at(
    geometry: Geometry, points: np.ndarray, profile: Optional[CutoffProfile] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """phi^eps and its gradient at arbitrary points (..., 2)."""
    profile = _resolve_profile(geometry, profile)
    points = np.asarray(points, dtype=float)
    total = np.zeros(points.shape[:-1])
    total_grad = np.zeros(points.shape)
    for center in geometry.centers:
        value, gradient = obstacle_cutoff(points, center, geometry.epsilon, profile)
        total += value
        total_grad += gradient
    return 1.0 - total, -total_grad


@dataclass
class CutoffNormReport:
    epsilon: float
    d_epsilon: float
    mu: float
    p: float
    lhs: float
    bound_shape: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.bound_shape


def cutoff_bound_shape(epsilon: float, d_epsilon: float, mu: float, p: float) -> float:
    """eps^(2/p) / d^((1+mu)/p)."""
    if np.isinf(p):
        return 1.0
    return epsilon ** (2.0 / p) / d_epsilon ** ((1.0 + mu) / p)


def verify_cutoff_norms(
    geometry: Geometry, grid: Grid, p: float, profile: Optional[CutoffProfile] = None
) -> CutoffNormReport:
    """Measured |1 - phi^eps|_p + eps |grad phi^eps|_p next to its predicted shape."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    phi, grad_phi = lattice_cutoff_with_gradient(geometry, grid, profile)
    lhs = lp_norm(ScalarField(grid, 1.0 - phi.values), p) + geometry.epsilon * lp_norm(grad_phi, p)
    report = CutoffNormReport(
        epsilon=geometry.epsilon,
        d_epsilon=geometry.d_epsilon,
        mu=geometry.mu,
        p=p,
        lhs=lhs,
        bound_shape=cutoff_bound_shape(geometry.epsilon, geometry.d_epsilon, geometry.mu, p),
    )
    logger.info(
        f"Cutoff norms eps={report.epsilon:.4g} d={report.d_epsilon:.4g} mu={report.mu} p={p}: "
        f"lhs={report.lhs:.4e} ratio={report.ratio:.4f}"
    )
    return report


def harmonic_gradient_per_obstacle(geometry: Geometry, grid: Grid) -> float:
    """Measured |grad phi~^eps|_2 divided by sqrt(number of obstacles)."""
    profile = CutoffProfile.harmonic(geometry.epsilon, geometry.d_epsilon)
    grad_phi = lattice_cutoff_gradient(geometry, grid, profile)
    return lp_norm(grad_phi, 2.0) / np.sqrt(max(geometry.count, 1))
