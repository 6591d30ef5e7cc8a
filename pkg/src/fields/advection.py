"""
Semi-Lagrangian transport shared by the Euler and Navier-Stokes solvers.

Departure points are traced backwards over one step with the SSP-RK3
stages; the velocity at intermediate times is extrapolated linearly from the
current and previous step, u(t_n + s dt) = (1 + s) u^n - s u^{n-1}.
"""

from typing import Optional

import numpy as np

from config.settings import settings
from src.errors import CFLViolationError
from src.fields.calculus import SplineInterpolator
from src.fields.grid import Field, VectorField


class ExtrapolatedVelocity:
    """Velocity at fractional times s in [0, 1] of the coming step."""

    def __init__(self, current: VectorField, previous: Optional[VectorField] = None, sign: float = 1.0):
        self.sign = sign
        self._current = SplineInterpolator(current, outside="nearest")
        self._previous = SplineInterpolator(previous, outside="nearest") if previous is not None else None

    def __call__(self, points: np.ndarray, s: float) -> np.ndarray:
        """Velocity (..., 2) at points (..., 2)."""
        value = self._current(points)
        if self._previous is not None and s != 0.0:
            value = (1.0 + s) * value - s * self._previous(points)
        return self.sign * np.moveaxis(value, 0, -1)


def check_cfl(u: VectorField, dt: float, cfl: Optional[float] = None) -> float:
    """Largest admissible step for u; raises when dt exceeds it."""
    cfl = settings.euler.euler_cfl if cfl is None else cfl
    speed = float(np.max(u.magnitude()))
    limit = np.inf if speed == 0.0 else cfl * u.grid.h / speed
    if dt > limit * (1.0 + 1e-12):
        raise CFLViolationError(dt, limit)
    return limit


def departure_points(velocity: ExtrapolatedVelocity, arrival: np.ndarray, dt: float) -> np.ndarray:
    """Foot of the trajectory through each arrival point over one step of length dt."""
    x1 = arrival - dt * velocity(arrival, 1.0)
    x2 = 0.75 * arrival + 0.25 * (x1 - dt * velocity(x1, 0.0))
    return arrival / 3.0 + 2.0 / 3.0 * (x2 - dt * velocity(x2, 0.5))


def advect(field: Field, velocity: ExtrapolatedVelocity, dt: float, order: Optional[int] = None) -> Field:
    """Transported field at the arrival nodes; open grids bring in zeros from outside."""
    grid = field.grid
    X, Y = grid.mesh()
    feet = departure_points(velocity, np.stack([X, Y], axis=-1), dt)
    return type(field)(grid, SplineInterpolator(field, order=order, outside="zero")(feet))
