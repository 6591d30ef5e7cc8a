"""
Rasterized region masks: solid obstacles, fluid domain, sleeve A_eps and
the reference cell U = (-2,2)^2 minus K.

A node counts as solid iff it lies in the closed obstacle.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Tuple

import numpy as np

from config.settings import settings
from src.errors import UnderResolvedGridError
from src.fields.grid import Grid
from src.geometry.lattice import Geometry, ObstacleShape

logger = logging.getLogger(__name__)


class RegionKind(str, Enum):
    SOLID = "solid"
    FLUID = "fluid"
    SLEEVE = "sleeve"
    REFERENCE_CELL = "reference_cell"


@dataclass(eq=False)
class RegionMask:
    grid: Grid
    kind: RegionKind
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"Mask shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def count(self) -> int:
        return int(self.values.sum())

    def area(self) -> float:
        return self.count * self.grid.cell_area

    def is_empty(self) -> bool:
        return not self.values.any()


def require_resolution(geometry: Geometry, grid: Grid) -> None:
    factor = settings.grid.obstacle_resolution
    if geometry.count and grid.h > geometry.epsilon / factor * (1.0 + 1e-12):
        raise UnderResolvedGridError(grid.h, geometry.epsilon, factor)


def label_nodes(geometry: Geometry, grid: Grid) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-node classification.

    Returns (solid, sleeve, labels) where labels holds the obstacle index
    owning the node's inflated cell, or -1.
    """
    require_resolution(geometry, grid)
    solid = np.zeros(grid.shape, dtype=bool)
    sleeve = np.zeros(grid.shape, dtype=bool)
    labels = np.full(grid.shape, -1, dtype=int)
    eps = geometry.epsilon
    for k, (cx, cy) in enumerate(geometry.centers):
        rows, cols = grid.window((cx - 2 * eps, cy - 2 * eps), (cx + 2 * eps, cy + 2 * eps))
        X, Y = np.meshgrid(grid.x[cols], grid.y[rows], indexing="xy")
        local = np.stack([(X - cx) / eps, (Y - cy) / eps], axis=-1)
        in_cell = np.max(np.abs(local), axis=-1) < 2.0
        in_obstacle = geometry.shape.contains(local)
        solid[rows, cols] |= in_obstacle
        sleeve[rows, cols] |= in_cell & ~in_obstacle
        labels[rows, cols] = np.where(in_cell, k, labels[rows, cols])
    return solid, sleeve, labels


def rasterize_all(geometry: Geometry, grid: Grid) -> Dict[RegionKind, RegionMask]:
    solid, sleeve, _ = label_nodes(geometry, grid)
    return {
        RegionKind.SOLID: RegionMask(grid, RegionKind.SOLID, solid),
        RegionKind.FLUID: RegionMask(grid, RegionKind.FLUID, ~solid),
        RegionKind.SLEEVE: RegionMask(grid, RegionKind.SLEEVE, sleeve),
    }


def rasterize(geometry: Geometry, grid: Grid, kind: RegionKind = RegionKind.SOLID) -> RegionMask:
    if kind is RegionKind.REFERENCE_CELL:
        raise ValueError("Use reference_cell_mask for the reference cell")
    mask = rasterize_all(geometry, grid)[kind]
    logger.debug(f"Rasterized {kind.value}: {mask.count} nodes at h={grid.h:.4g}")
    return mask


def reference_cell_grid(resolution: int = None) -> Grid:
    """Cell-centred grid on (-2, 2)^2 with `resolution` cells per axis."""
    resolution = resolution or settings.corrector.cell_resolution
    h = 4.0 / resolution
    return Grid(origin=(-2.0 + 0.5 * h, -2.0 + 0.5 * h), h=h, nx=resolution, ny=resolution)


def reference_cell_mask(shape: ObstacleShape, grid: Grid) -> RegionMask:
    """Interior cells of U: outside K and off the outermost ring of the square."""
    X, Y = grid.mesh()
    fluid = ~shape.contains(np.stack([X, Y], axis=-1))
    fluid[0, :] = fluid[-1, :] = False
    fluid[:, 0] = fluid[:, -1] = False
    return RegionMask(grid, RegionKind.REFERENCE_CELL, fluid)


def lattice_grid(geometry: Geometry, margin: float = 0.0, nodes_per_epsilon: int = None) -> Grid:
    """Open grid of spacing eps/N covering every inflated cell plus a margin."""
    nodes_per_epsilon = nodes_per_epsilon or settings.grid.obstacle_resolution
    lower, upper = geometry.bounding_box(margin)
    return Grid.covering(lower, upper, geometry.epsilon / nodes_per_epsilon)
