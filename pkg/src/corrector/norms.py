"""
Scaled Sobolev norms on the sleeve and empirical constants of the cell problem.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import linalg as splinalg

from config.settings import settings
from src.corrector.cell import CellSolution, get_cell_solver
from src.fields.calculus import gradient_lp_norm, lp_norm
from src.fields.grid import Field, Grid, ScalarField
from src.geometry.lattice import ObstacleShape

logger = logging.getLogger(__name__)

# Smoothing widths (in cells) drawn for the random ensembles.
_SMOOTHING_WIDTHS = (1.0, 2.0, 4.0, 8.0)


@dataclass(frozen=True)
class ScaledSobolevNorm:
    """(eps^-p |f|_p^p + |grad f|_p^p)^(1/p), the eps-weighted W^{1,p} norm."""

    epsilon: float
    p: float

    def __call__(self, f: Field, mask=None) -> float:
        value = lp_norm(f, self.p, mask) ** self.p / self.epsilon**self.p
        return float((value + gradient_lp_norm(f, self.p, mask) ** self.p) ** (1.0 / self.p))

    def from_cells(self, cells: Sequence[CellSolution]) -> float:
        """The same norm of h^eps computed from the cell solutions by change of variables."""
        total = sum(self.epsilon ** (2.0 - self.p) * cell.sobolev_norm(self.p) ** self.p for cell in cells)
        return float(total ** (1.0 / self.p))


def scaled_poincare_ratio(u: Field, epsilon: float) -> float:
    """|u|_2 / (eps |grad u|_2)."""
    return lp_norm(u, 2.0) / (epsilon * gradient_lp_norm(u, 2.0))


def scaled_embedding_ratio(u: Field, epsilon: float) -> float:
    """|u|_4 / (sqrt(eps) |grad u|_2)."""
    return lp_norm(u, 4.0) / (np.sqrt(epsilon) * gradient_lp_norm(u, 2.0))


def scaled_cell_grid(reference: Grid, epsilon: float) -> Grid:
    """The reference cell grid stretched by eps about the origin."""
    return Grid(
        origin=(epsilon * reference.origin[0], epsilon * reference.origin[1]),
        h=epsilon * reference.h,
        nx=reference.nx,
        ny=reference.ny,
    )


def _smoothed_noise(rng: np.random.Generator, shape) -> np.ndarray:
    width = rng.choice(_SMOOTHING_WIDTHS)
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=width, mode="constant")
    return noise / (np.abs(noise).max() or 1.0)


def _vanishing_factor(shape: ObstacleShape, grid: Grid, fluid: np.ndarray) -> np.ndarray:
    """Nonnegative weight vanishing on the obstacle and on the outer square."""
    X, Y = grid.mesh()
    distance = np.clip(shape.signed_distance(np.stack([X, Y], axis=-1)), 0.0, 1.0)
    square = (4.0 - X**2) * (4.0 - Y**2) / 16.0
    return np.where(fluid, distance * square, 0.0)


@dataclass
class ConstantsReport:
    shape: str
    p: float
    C_tilde: float
    K1: float
    K2: float
    ensemble_size: int
    K1_sharp: Optional[float] = None

    def to_row(self) -> dict:
        return {
            "shape": self.shape,
            "p": self.p,
            "C_tilde": self.C_tilde,
            "K1": self.K1,
            "K2": self.K2,
            "ensemble_size": self.ensemble_size,
        }


def estimate_constants(
    shape: ObstacleShape,
    p: float = 2.0,
    ensemble_size: Optional[int] = None,
    seed: Optional[int] = None,
    resolution: Optional[int] = None,
    epsilon: float = 1.0,
) -> ConstantsReport:
    """
    Ensemble maxima of |h|_{W^{1,p}(U)} / |f|_{L^p(U)} over random mean-zero f, and of the
    Poincare and embedding ratios over random fields vanishing on the boundary of U.
    The latter are measured on the cell stretched by eps; both ratios are eps-free.
    """
    ensemble_size = ensemble_size or settings.corrector.ensemble_size
    if ensemble_size < 20:
        raise ValueError(f"Constant estimation needs at least 20 samples, got {ensemble_size}")
    rng = np.random.default_rng(settings.corrector.seed if seed is None else seed)
    solver = get_cell_solver(shape, resolution or settings.corrector.cell_resolution)
    fluid = solver.mask.values
    reference = solver.grid

    rhs = []
    for _ in range(ensemble_size):
        f = np.where(fluid, _smoothed_noise(rng, reference.shape), 0.0)
        rhs.append(np.where(fluid, f - f[fluid].mean(), 0.0))
    solutions = solver.solve_many(rhs)
    c_tilde = max(
        solution.sobolev_norm(p) / lp_norm(ScalarField(reference, f), p)
        for solution, f in zip(solutions, rhs)
    )

    scaled = scaled_cell_grid(reference, epsilon)
    factor = _vanishing_factor(shape, reference, fluid)
    k1 = k2 = 0.0
    for _ in range(ensemble_size):
        u = ScalarField(scaled, factor * _smoothed_noise(rng, reference.shape))
        k1 = max(k1, scaled_poincare_ratio(u, epsilon))
        k2 = max(k2, scaled_embedding_ratio(u, epsilon))

    report = ConstantsReport(
        shape=shape.kind.value,
        p=p,
        C_tilde=float(c_tilde),
        K1=float(k1),
        K2=float(k2),
        ensemble_size=ensemble_size,
        K1_sharp=dirichlet_poincare_bound(shape, solver.resolution),
    )
    logger.info(
        f"Constants for {report.shape} p={p}: C_tilde={report.C_tilde:.4f} "
        f"K1={report.K1:.4f} (sharp {report.K1_sharp:.4f}) K2={report.K2:.4f}"
    )
    return report


def dirichlet_poincare_bound(shape: ObstacleShape, resolution: Optional[int] = None) -> float:
    """1 / sqrt(lambda_1) for the five-point Dirichlet Laplacian on U."""
    solver = get_cell_solver(shape, resolution or settings.corrector.cell_resolution)
    index = solver.cell_index
    n, d = solver.n_cells, solver.delta
    active = index >= 0
    rows, cols, vals = [index[active]], [index[active]], [np.full(n, 4.0 / d**2)]
    padded = np.pad(index, 1, constant_values=-1)
    for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        neighbour = padded[1 + dj: 1 + dj + index.shape[0], 1 + di: 1 + di + index.shape[1]][active]
        keep = neighbour >= 0
        rows.append(index[active][keep])
        cols.append(neighbour[keep])
        vals.append(np.full(int(keep.sum()), -1.0 / d**2))
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    eigenvalue = splinalg.eigsh(A, k=1, sigma=0.0, which="LM", return_eigenvectors=False)[0]
    return float(1.0 / np.sqrt(eigenvalue))
