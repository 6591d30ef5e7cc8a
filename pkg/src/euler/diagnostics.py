"""
Diagnostics on Euler trajectories: gradient growth envelope, pressure, and the
orientation of a vortex pair.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import lambertw

from src.euler.solver import EulerState, EulerTrajectory
from src.fields.calculus import advective_derivative, div, gradient_lp_norm
from src.fields.grid import ScalarField
from src.fields.poisson import poisson_freespace

logger = logging.getLogger(__name__)


@dataclass
class YudovichReport:
    series: pd.DataFrame
    envelope_constant: float

    def envelope(self, t: np.ndarray) -> np.ndarray:
        """C exp(C t)."""
        return self.envelope_constant * np.exp(self.envelope_constant * np.asarray(t))


def envelope_constant(times: np.ndarray, values: np.ndarray) -> float:
    """Smallest C with C exp(C t_k) >= g_k at every sample."""
    best = 0.0
    for t, g in zip(times, values):
        if g <= 0:
            continue
        c = g if t <= 0 else float(np.real(lambertw(g * t))) / t
        best = max(best, c)
    return best


def yudovich_report(trajectory: EulerTrajectory) -> YudovichReport:
    """Measured |grad u(t)|_inf at every step and the fitted exponential envelope."""
    series = trajectory.series[["time", "grad_u_inf"]].reset_index(drop=True)
    constant = envelope_constant(series["time"].to_numpy(float), series["grad_u_inf"].to_numpy(float))
    logger.info(f"Gradient envelope constant C0={constant:.4f} over {len(series)} samples")
    return YudovichReport(series=series, envelope_constant=constant)


def euler_pressure(state: EulerState, gauge_radius: float = 2.0) -> ScalarField:
    """Pressure from Laplacian(p) = -div((u . grad) u), zero mean on the disk of radius gauge_radius."""
    u = state.velocity
    rhs = -div(advective_derivative(u, u))
    p = poisson_freespace(rhs, check_support=False)
    X, Y = u.grid.mesh()
    gauge = np.hypot(X, Y) < gauge_radius
    offset = p.values[gauge].mean() if gauge.any() else p.values.mean()
    return ScalarField(u.grid, p.values - offset)


def pair_angle(omega: ScalarField) -> float:
    """Principal-axis angle of the vorticity distribution, in (-pi/2, pi/2]."""
    X, Y = omega.grid.mesh()
    w = np.abs(omega.values)
    total = w.sum()
    if total == 0:
        return 0.0
    cx, cy = (w * X).sum() / total, (w * Y).sum() / total
    ixx = (w * (X - cx) ** 2).sum()
    iyy = (w * (Y - cy) ** 2).sum()
    ixy = (w * (X - cx) * (Y - cy)).sum()
    return float(0.5 * np.arctan2(2.0 * ixy, ixx - iyy))


def max_gradient(state: EulerState) -> float:
    return gradient_lp_norm(state.velocity, np.inf)
