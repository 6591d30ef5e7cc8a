"""
Obstacle shapes and the perforated lattice of inclusions.

Obstacle (i, j) is z_ij + eps*K with centers
z_ij = (eps, eps) + 2(eps + d)(i - 1, j - 1), i <= n1, j <= n2.
"""

import json
import logging
import math
from enum import Enum
from typing import Any, Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial import cKDTree

from src.errors import LatticeError

logger = logging.getLogger(__name__)


class ShapeKind(str, Enum):
    """Reference obstacle shapes inside [-1, 1]^2."""
    DISK = "disk"
    SMOOTHED_SQUARE = "smoothed_square"


class ObstacleShape(BaseModel):
    """Reference obstacle K: the unit disk or the square [-1,1]^2 with rounded corners."""

    model_config = ConfigDict(frozen=True)

    kind: ShapeKind = Field(default=ShapeKind.DISK, description="Reference shape")
    corner_radius: float = Field(default=0.5, gt=0.0, le=1.0, description="Corner radius of the smoothed square")

    @property
    def is_disk(self) -> bool:
        return self.kind is ShapeKind.DISK

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Negative inside K, zero on its boundary."""
        points = np.asarray(points, dtype=float)
        if self.is_disk:
            return np.hypot(points[..., 0], points[..., 1]) - 1.0
        r = self.corner_radius
        qx = np.abs(points[..., 0]) - (1.0 - r)
        qy = np.abs(points[..., 1]) - (1.0 - r)
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        inside = np.minimum(np.maximum(qx, qy), 0.0)
        return outside + inside - r

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-set membership."""
        return self.signed_distance(points) <= 0.0

    def area(self) -> float:
        if self.is_disk:
            return math.pi
        return 4.0 - (4.0 - math.pi) * self.corner_radius**2

    def boundary_points(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """n points on the boundary of K (counter-clockwise) and their outward unit normals."""
        theta = 2.0 * np.pi * np.arange(n) / n
        direction = np.column_stack([np.cos(theta), np.sin(theta)])
        if self.is_disk:
            return direction.copy(), direction.copy()
        lo = np.zeros(n)
        hi = np.full(n, math.sqrt(2.0))
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            inside = self.signed_distance(mid[:, None] * direction) <= 0.0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        points = (0.5 * (lo + hi))[:, None] * direction
        step = 1e-6
        gx = (self.signed_distance(points + [step, 0.0]) - self.signed_distance(points - [step, 0.0])) / (2 * step)
        gy = (self.signed_distance(points + [0.0, step]) - self.signed_distance(points - [0.0, step])) / (2 * step)
        normals = np.column_stack([gx, gy])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return points, normals


class LatticeConfig(BaseModel):
    """Lattice parameters (eps, d_eps, mu) and the reference shape."""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(..., gt=0.0, description="Obstacle size")
    d_epsilon: float = Field(..., gt=0.0, le=1.0, description="Half inter-obstacle distance")
    mu: float = Field(default=1.0, ge=0.0, le=1.0, description="Lattice dimension exponent (0 line, 1 square)")
    shape: ObstacleShape = Field(default_factory=ObstacleShape)

    @model_validator(mode="after")
    def validate_separation(self) -> "LatticeConfig":
        if self.d_epsilon < self.epsilon * (1.0 - 1e-12):
            raise ValueError(
                f"d_epsilon={self.d_epsilon} < epsilon={self.epsilon}: only the regime d_epsilon >= epsilon is supported"
            )
        return self


class Geometry(BaseModel):
    """Realized obstacle lattice."""

    model_config = ConfigDict(frozen=True)

    config: LatticeConfig
    n1: int = Field(..., ge=0)
    n2: int = Field(..., ge=0)
    centers: List[Tuple[float, float]] = Field(default_factory=list)
    indices: List[Tuple[int, int]] = Field(default_factory=list, description="1-based (i, j) per center")

    @field_validator("centers")
    @classmethod
    def validate_centers(cls, v: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        if not all(np.isfinite(c).all() for c in v):
            raise ValueError("Obstacle centers must be finite")
        return v

    @model_validator(mode="after")
    def fill_indices(self) -> "Geometry":
        if not self.indices and self.centers:
            object.__setattr__(self, "indices", [(k + 1, 1) for k in range(len(self.centers))])
        if len(self.indices) != len(self.centers):
            raise ValueError("indices and centers differ in length")
        return self

    @classmethod
    def empty(cls, config: LatticeConfig) -> "Geometry":
        """Obstacle-free geometry, used for control runs."""
        return cls(config=config, n1=0, n2=0, centers=[], indices=[])

    @property
    def epsilon(self) -> float:
        return self.config.epsilon

    @property
    def d_epsilon(self) -> float:
        return self.config.d_epsilon

    @property
    def mu(self) -> float:
        return self.config.mu

    @property
    def shape(self) -> ObstacleShape:
        return self.config.shape

    @property
    def count(self) -> int:
        return len(self.centers)

    @property
    def centers_array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=float).reshape(-1, 2)

    def bounding_box(self, margin: float = 0.0) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        """Box covering every inflated cell z + eps(-2,2)^2 plus a margin."""
        if not self.centers:
            raise LatticeError("Empty geometry has no bounding box")
        c = self.centers_array
        reach = 2.0 * self.epsilon + margin
        return (float(c[:, 0].min() - reach), float(c[:, 1].min() - reach)), (
            float(c[:, 0].max() + reach),
            float(c[:, 1].max() + reach),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "d_epsilon": self.d_epsilon,
            "mu": self.mu,
            "shape": self.shape.model_dump(mode="json"),
            "n1": self.n1,
            "n2": self.n2,
            "centers": [[x, y] for x, y in self.centers],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Geometry":
        data = json.loads(text)
        config = LatticeConfig(
            epsilon=data["epsilon"],
            d_epsilon=data["d_epsilon"],
            mu=data["mu"],
            shape=ObstacleShape(**data["shape"]),
        )
        if data["n1"] * data["n2"] == len(data["centers"]) and data["centers"]:
            indices = [(i, j) for j in range(1, data["n2"] + 1) for i in range(1, data["n1"] + 1)]
        else:
            indices = []
        return cls(
            config=config,
            n1=data["n1"],
            n2=data["n2"],
            centers=[tuple(c) for c in data["centers"]],
            indices=indices,
        )


def lattice_counts(config: LatticeConfig) -> Tuple[int, int]:
    """(n1, n2) = (floor((1+2d)/(2(eps+d))), floor(n1^mu))."""
    eps, d = config.epsilon, config.d_epsilon
    n1 = int(math.floor((1.0 + 2.0 * d) / (2.0 * (eps + d)) + 1e-9))
    n2 = int(math.floor(n1**config.mu + 1e-9)) if n1 > 0 else 0
    return n1, n2


def lattice_centers(config: LatticeConfig) -> Geometry:
    n1, n2 = lattice_counts(config)
    if n1 < 1:
        raise LatticeError(
            f"Lattice with epsilon={config.epsilon}, d_epsilon={config.d_epsilon} holds no obstacle (n1=0)"
        )
    spacing = 2.0 * (config.epsilon + config.d_epsilon)
    centers, indices = [], []
    for j in range(1, n2 + 1):
        for i in range(1, n1 + 1):
            centers.append((config.epsilon + spacing * (i - 1), config.epsilon + spacing * (j - 1)))
            indices.append((i, j))
    logger.debug(f"Built lattice n1={n1} n2={n2} for eps={config.epsilon} d={config.d_epsilon} mu={config.mu}")
    return Geometry(config=config, n1=n1, n2=n2, centers=centers, indices=indices)


def check_disjoint(geometry: Geometry) -> bool:
    """True iff the open inflated cells z + eps(-2,2)^2 are pairwise disjoint."""
    if geometry.count < 2:
        return True
    tree = cKDTree(geometry.centers_array)
    pairs = tree.query_pairs(r=4.0 * geometry.epsilon * (1.0 - 1e-9), p=np.inf)
    return len(pairs) == 0
