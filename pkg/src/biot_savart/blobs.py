"""
Smooth, compactly supported vorticity blobs used as initial data.
"""

import math
from enum import Enum
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.fields.grid import Grid, ScalarField

GAUSSIAN_TRUNCATION = 8.0


class BlobKind(str, Enum):
    GAUSSIAN = "gaussian"
    BUMP = "bump"


class VorticityBlob(BaseModel):
    """
    gaussian: amplitude * exp(-r^2 / (2 radius^2)), cut at 8 radius.
    bump: amplitude * exp(1 - 1 / (1 - (r / radius)^2)) for r < radius.
    """

    model_config = ConfigDict(frozen=True)

    kind: BlobKind = Field(default=BlobKind.GAUSSIAN, description="Profile family")
    center: Tuple[float, float] = Field(..., description="Blob center")
    radius: float = Field(..., gt=0.0, description="Gaussian width or bump support radius")
    amplitude: float = Field(default=1.0, description="Peak vorticity")

    @property
    def support_radius(self) -> float:
        if self.kind is BlobKind.GAUSSIAN:
            return GAUSSIAN_TRUNCATION * self.radius
        return self.radius

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        r2 = (points[..., 0] - self.center[0]) ** 2 + (points[..., 1] - self.center[1]) ** 2
        if self.kind is BlobKind.GAUSSIAN:
            value = np.exp(-0.5 * r2 / self.radius**2)
            return np.where(r2 < self.support_radius**2, self.amplitude * value, 0.0)
        s = np.minimum(r2 / self.radius**2, 1.0 - 1e-12)
        return np.where(r2 < self.radius**2, self.amplitude * np.exp(1.0 - 1.0 / (1.0 - s)), 0.0)

    def sample(self, grid: Grid) -> ScalarField:
        X, Y = grid.mesh()
        return ScalarField(grid, self(np.stack([X, Y], axis=-1)))

    def scaled(self, factor: float) -> "VorticityBlob":
        return self.model_copy(update={"amplitude": self.amplitude * factor})

    def circulation(self) -> float:
        """Total circulation, exact for the gaussian, radial quadrature for the bump."""
        if self.kind is BlobKind.GAUSSIAN:
            return 2.0 * math.pi * self.radius**2 * self.amplitude
        r = np.linspace(0.0, self.radius, 4001)
        s = np.minimum((r / self.radius) ** 2, 1.0 - 1e-12)
        profile = np.where(r < self.radius, np.exp(1.0 - 1.0 / (1.0 - s)), 0.0)
        return float(2.0 * math.pi * self.amplitude * np.trapezoid(profile * r, r))


def sample_blobs(blobs: Sequence[VorticityBlob], grid: Grid) -> ScalarField:
    X, Y = grid.mesh()
    points = np.stack([X, Y], axis=-1)
    return ScalarField(grid, sum((blob(points) for blob in blobs), np.zeros(grid.shape)))


def blobs_bounding_box(blobs: Iterable[VorticityBlob]) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    blobs = list(blobs)
    lower = (min(b.center[0] - b.support_radius for b in blobs), min(b.center[1] - b.support_radius for b in blobs))
    upper = (max(b.center[0] + b.support_radius for b in blobs), max(b.center[1] + b.support_radius for b in blobs))
    return lower, upper


def norm_l1_linf(omega: ScalarField) -> float:
    """M0 = |omega|_1 + |omega|_inf."""
    values = np.abs(omega.values)
    return float(values.sum() * omega.grid.cell_area + values.max())


VorticityInput = Union[VorticityBlob, Sequence[VorticityBlob], ScalarField]


def vorticity_on(omega0: VorticityInput, grid: Grid) -> ScalarField:
    """Sample blob initial data on a grid; a field is passed through after a grid check."""
    if isinstance(omega0, ScalarField):
        if omega0.grid != grid:
            raise ValueError("Vorticity field lives on a different grid")
        return omega0
    if isinstance(omega0, VorticityBlob):
        return omega0.sample(grid)
    return sample_blobs(list(omega0), grid)


def blob_source_grid(blobs: Sequence[VorticityBlob], nodes: int) -> Grid:
    """Open grid with `nodes` points per axis spanning the blobs' supports."""
    lower, upper = blobs_bounding_box(blobs)
    h = max(upper[0] - lower[0], upper[1] - lower[1]) / (nodes - 1)
    return Grid.covering(lower, upper, h)
