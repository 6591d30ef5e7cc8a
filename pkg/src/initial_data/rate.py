"""
Convergence of the corrected initial data as the obstacles shrink.
"""

import logging
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from config.settings import settings
from src.biot_savart.blobs import VorticityBlob, blobs_bounding_box, sample_blobs
from src.biot_savart.kernel import biot_savart_fft
from src.fields.calculus import lp_norm
from src.fields.grid import Grid
from src.geometry.lattice import Geometry, LatticeConfig, ObstacleShape, lattice_centers
from src.geometry.masks import label_nodes, lattice_grid
from src.initial_data.grid_solve import solve_exterior
from src.initial_data.images import ImageSystem

logger = logging.getLogger(__name__)

RATE_COLUMNS = ["epsilon", "d_epsilon", "mu", "l2_error", "bound_shape", "ratio"]


def initial_bound_shape(epsilon: float, d_epsilon: float, mu: float) -> float:
    """eps |ln eps| / d^((1+mu)/2)."""
    return epsilon * abs(math.log(epsilon)) / d_epsilon ** ((1.0 + mu) / 2.0)


def image_gap(geometry: Geometry, system: ImageSystem, nodes_per_epsilon: Optional[int] = None) -> float:
    """|v^eps - u_0|_2 over the fluid; the gap vanishes away from the obstacles."""
    grid = lattice_grid(geometry, nodes_per_epsilon=nodes_per_epsilon)
    solid, _, _ = label_nodes(geometry, grid)
    X, Y = grid.mesh()
    fluid = ~solid
    gap = system.evaluate(np.column_stack([X[fluid], Y[fluid]])).velocity_gap
    return float(np.sqrt(np.sum(gap**2) * grid.cell_area))


def grid_gap(geometry: Geometry, blobs: Sequence[VorticityBlob]) -> float:
    """|u_0^eps - u_0|_2 over the fluid of a box holding the obstacles and the vorticity in its inner half."""
    lower, upper = blobs_bounding_box(blobs)
    g_lower, g_upper = geometry.bounding_box()
    lo = (min(lower[0], g_lower[0]), min(lower[1], g_lower[1]))
    hi = (max(upper[0], g_upper[0]), max(upper[1], g_upper[1]))
    pad = 0.5 * max(hi[0] - lo[0], hi[1] - lo[1])
    grid = Grid.covering(
        (lo[0] - pad, lo[1] - pad), (hi[0] + pad, hi[1] + pad), geometry.epsilon / settings.grid.obstacle_resolution
    )
    omega = sample_blobs(list(blobs), grid)
    solution = solve_exterior(geometry, omega, grid)
    solid, _, _ = label_nodes(geometry, grid)
    return lp_norm(solution.velocity - biot_savart_fft(omega), 2.0, ~solid)


def measure_initial_rate(
    blobs: Sequence[VorticityBlob],
    epsilons: Iterable[float],
    shape: Optional[ObstacleShape] = None,
    mu: float = 1.0,
    d_rule: Optional[Callable[[float], float]] = None,
    run_grid_solve: bool = False,
    nodes_per_epsilon: Optional[int] = None,
) -> pd.DataFrame:
    """
    One row per epsilon: |v^eps - u_0|_2 next to eps |ln eps| / d^((1+mu)/2).
    d_rule maps eps to d_eps (default d = eps). With run_grid_solve the
    exterior solution is also measured (column grid_l2_error).
    """
    shape = shape or ObstacleShape()
    d_rule = d_rule or (lambda eps: eps)
    blobs = list(blobs)
    rows = []
    for epsilon in epsilons:
        geometry = lattice_centers(LatticeConfig(epsilon=epsilon, d_epsilon=d_rule(epsilon), mu=mu, shape=shape))
        system = ImageSystem.from_blobs(geometry, blobs)
        error = image_gap(geometry, system, nodes_per_epsilon)
        bound = initial_bound_shape(epsilon, geometry.d_epsilon, mu)
        row = {
            "epsilon": epsilon,
            "d_epsilon": geometry.d_epsilon,
            "mu": mu,
            "l2_error": error,
            "bound_shape": bound,
            "ratio": error / bound,
        }
        if run_grid_solve:
            row["grid_l2_error"] = grid_gap(geometry, blobs)
        logger.info(f"Initial rate eps={epsilon:.4g} d={geometry.d_epsilon:.4g}: error={error:.4e} ratio={error / bound:.4f}")
        rows.append(row)
    columns = RATE_COLUMNS + (["grid_l2_error"] if run_grid_solve else [])
    return pd.DataFrame(rows, columns=columns)
