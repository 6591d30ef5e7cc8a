"""
Uniform grids and the scalar/vector fields sampled on them.
Arrays are stored row-major with shape (ny, nx): x varies fastest.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

import numpy as np

from config.settings import settings


class BoundaryKind(str, Enum):
    """How differences and interpolation treat the box edges."""
    PERIODIC = "periodic"
    OPEN = "open"


@dataclass(frozen=True)
class Grid:
    """Node-centred uniform grid: node (i, j) sits at origin + h * (i, j)."""

    origin: Tuple[float, float]
    h: float
    nx: int
    ny: int
    boundary: BoundaryKind = BoundaryKind.OPEN

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"Grid spacing must be positive, got h={self.h}")
        minimum = settings.grid.min_nodes
        if self.nx < minimum or self.ny < minimum:
            raise ValueError(f"Grid needs at least {minimum} nodes per axis, got {self.nx}x{self.ny}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "boundary", BoundaryKind(self.boundary))

    @classmethod
    def periodic_box(cls, center: Tuple[float, float], side: float, n: int) -> "Grid":
        """n x n periodic grid of period `side` centred on `center`."""
        h = side / n
        origin = (center[0] - 0.5 * side + 0.5 * h, center[1] - 0.5 * side + 0.5 * h)
        return cls(origin=origin, h=h, nx=n, ny=n, boundary=BoundaryKind.PERIODIC)

    @classmethod
    def covering(
        cls,
        lower: Tuple[float, float],
        upper: Tuple[float, float],
        h: float,
        boundary: BoundaryKind = BoundaryKind.OPEN,
    ) -> "Grid":
        """Smallest grid of spacing h whose nodes span the box [lower, upper]."""
        nx = max(int(math.ceil((upper[0] - lower[0]) / h)) + 1, settings.grid.min_nodes)
        ny = max(int(math.ceil((upper[1] - lower[1]) / h)) + 1, settings.grid.min_nodes)
        return cls(origin=lower, h=h, nx=nx, ny=ny, boundary=boundary)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def periodic(self) -> bool:
        return self.boundary is BoundaryKind.PERIODIC

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    @property
    def upper(self) -> Tuple[float, float]:
        """Coordinates of the last node."""
        return (self.origin[0] + self.h * (self.nx - 1), self.origin[1] + self.h * (self.ny - 1))

    @property
    def center(self) -> Tuple[float, float]:
        lo, hi = self.origin, self.upper
        return (0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]))

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="xy")

    def points(self) -> np.ndarray:
        """All node coordinates as an (ny*nx, 2) array in storage order."""
        X, Y = self.mesh()
        return np.column_stack([X.ravel(), Y.ravel()])

    def window(self, lower: Tuple[float, float], upper: Tuple[float, float]) -> Tuple[slice, slice]:
        """Index slices (rows, cols) of the nodes inside the closed box [lower, upper]."""
        i0 = max(int(math.ceil((lower[0] - self.origin[0]) / self.h - 1e-9)), 0)
        i1 = min(int(math.floor((upper[0] - self.origin[0]) / self.h + 1e-9)), self.nx - 1)
        j0 = max(int(math.ceil((lower[1] - self.origin[1]) / self.h - 1e-9)), 0)
        j1 = min(int(math.floor((upper[1] - self.origin[1]) / self.h + 1e-9)), self.ny - 1)
        return slice(j0, max(j1 + 1, j0)), slice(i0, max(i1 + 1, i0))

    def with_boundary(self, boundary: BoundaryKind) -> "Grid":
        return Grid(origin=self.origin, h=self.h, nx=self.nx, ny=self.ny, boundary=boundary)


class _FieldArithmetic:
    """Pointwise arithmetic shared by scalar and vector fields."""

    grid: Grid
    values: np.ndarray

    def _operand(self, other):
        if isinstance(other, _FieldArithmetic):
            if other.grid != self.grid:
                raise ValueError("Fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return type(self)(self.grid, self.values + self._operand(other))

    def __sub__(self, other):
        return type(self)(self.grid, self.values - self._operand(other))

    def __mul__(self, other):
        if isinstance(other, ScalarField) and isinstance(self, VectorField):
            return VectorField(self.grid, self.values * self._operand(other)[None])
        return type(self)(self.grid, self.values * self._operand(other))

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.values)

    def copy(self):
        return type(self)(self.grid, self.values.copy())


@dataclass(eq=False)
class ScalarField(_FieldArithmetic):
    """One sample per node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"Scalar samples have shape {self.values.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Scalar field contains non-finite samples")

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @property
    def ncomp(self) -> int:
        return 1

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass(eq=False)
class VectorField(_FieldArithmetic):
    """Two collocated components per node, stored as (2, ny, nx)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (2,) + self.grid.shape:
            raise ValueError(f"Vector samples have shape {self.values.shape}, grid expects {(2,) + self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Vector field contains non-finite samples")

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((2,) + grid.shape))

    @classmethod
    def from_components(cls, grid: Grid, ux: np.ndarray, uy: np.ndarray) -> "VectorField":
        return cls(grid, np.stack([ux, uy]))

    @property
    def ncomp(self) -> int:
        return 2

    @property
    def x(self) -> np.ndarray:
        return self.values[0]

    @property
    def y(self) -> np.ndarray:
        return self.values[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.values[0], self.values[1])

    def dot(self, other: "VectorField") -> ScalarField:
        return ScalarField(self.grid, np.sum(self.values * self._operand(other), axis=0))


Field = Union[ScalarField, VectorField]
