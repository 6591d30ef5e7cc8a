"""
Cutoff profiles.

smoothstep: phi = 1 for |x|_inf <= 3/2, 0 for |x|_inf >= 2, quintic ramp in
between (x in units of eps). harmonic: ln(|x|/d)/ln(eps/d) on the annulus
eps <= |x| <= d (x in physical units).
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

PLATEAU = 1.5
REACH = 2.0


class ProfileKind(str, Enum):
    SMOOTHSTEP = "smoothstep"
    HARMONIC = "harmonic"


@dataclass(frozen=True)
class CutoffProfile:
    kind: ProfileKind = ProfileKind.SMOOTHSTEP
    epsilon: Optional[float] = None
    d_epsilon: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        if self.kind is ProfileKind.HARMONIC:
            if self.epsilon is None or self.d_epsilon is None:
                raise ValueError("Harmonic profile needs epsilon and d_epsilon")
            if not self.d_epsilon > self.epsilon > 0:
                raise ValueError(
                    f"Harmonic profile needs d_epsilon > epsilon > 0, got eps={self.epsilon} d={self.d_epsilon}"
                )

    @classmethod
    def smoothstep(cls) -> "CutoffProfile":
        return cls(ProfileKind.SMOOTHSTEP)

    @classmethod
    def harmonic(cls, epsilon: float, d_epsilon: float) -> "CutoffProfile":
        return cls(ProfileKind.HARMONIC, epsilon, d_epsilon)

    def support_radius(self, epsilon: float) -> float:
        """Physical half-width of the region where the obstacle cutoff is nonzero."""
        if self.kind is ProfileKind.SMOOTHSTEP:
            return REACH * epsilon
        return self.d_epsilon


def _ramp(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """C2 quintic smoothstep and its derivative on [0, 1]."""
    value = t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    slope = 30.0 * t**2 * (1.0 - t) ** 2
    return value, slope


def smoothstep_value_and_gradient(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """phi and grad phi at scaled points x (..., 2)."""
    x = np.asarray(x, dtype=float)
    ax, ay = np.abs(x[..., 0]), np.abs(x[..., 1])
    s = np.maximum(ax, ay)
    t = np.clip((s - PLATEAU) / (REACH - PLATEAU), 0.0, 1.0)
    ramp, slope = _ramp(t)
    value = 1.0 - ramp
    dphi_ds = np.where((s > PLATEAU) & (s < REACH), -slope / (REACH - PLATEAU), 0.0)
    x_dominant = ax >= ay
    gradient = np.stack([
        np.where(x_dominant, dphi_ds * np.sign(x[..., 0]), 0.0),
        np.where(x_dominant, 0.0, dphi_ds * np.sign(x[..., 1])),
    ], axis=-1)
    return value, gradient


def harmonic_value_and_gradient(offset: np.ndarray, epsilon: float, d_epsilon: float) -> Tuple[np.ndarray, np.ndarray]:
    offset = np.asarray(offset, dtype=float)
    r = np.hypot(offset[..., 0], offset[..., 1])
    log_ratio = math.log(epsilon / d_epsilon)
    safe_r = np.maximum(r, epsilon)
    annulus = (r > epsilon) & (r < d_epsilon)
    value = np.where(r <= epsilon, 1.0, np.where(annulus, np.log(safe_r / d_epsilon) / log_ratio, 0.0))
    radial = np.where(annulus, 1.0 / (safe_r**2 * log_ratio), 0.0)
    return value, radial[..., None] * offset


def base_cutoff(x, profile: CutoffProfile = CutoffProfile()) -> np.ndarray:
    """
    Base profile value. For the smoothstep x is in units of eps; for the
    harmonic profile x is the physical offset from the obstacle center.
    """
    x = np.asarray(x, dtype=float)
    if profile.kind is ProfileKind.SMOOTHSTEP:
        value, _ = smoothstep_value_and_gradient(x)
    else:
        value, _ = harmonic_value_and_gradient(x, profile.epsilon, profile.d_epsilon)
    return value if value.ndim else float(value)


def obstacle_cutoff(
    points: np.ndarray, center: Tuple[float, float], epsilon: float, profile: CutoffProfile = CutoffProfile()
) -> Tuple[np.ndarray, np.ndarray]:
    """phi_ij and its physical gradient at points (..., 2)."""
    offset = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    if profile.kind is ProfileKind.SMOOTHSTEP:
        value, gradient = smoothstep_value_and_gradient(offset / epsilon)
        return value, gradient / epsilon
    return harmonic_value_and_gradient(offset, profile.epsilon, profile.d_epsilon)


def harmonic_gradient_norm(epsilon: float, d_epsilon: float) -> float:
    """Closed-form L2 norm of grad phi over one annulus: sqrt(2 pi / |ln(eps/d)|)."""
    return math.sqrt(2.0 * math.pi / abs(math.log(epsilon / d_epsilon)))
