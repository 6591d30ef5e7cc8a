"""
Full-plane 2D Euler solver in vorticity form.

omega is transported by u = K * omega with a semi-Lagrangian step; the
velocity is refreshed by the doubled-lattice Biot-Savart convolution after
every step.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from config.settings import settings
from src.biot_savart.kernel import biot_savart_fft
from src.fields.advection import ExtrapolatedVelocity, advect, check_cfl
from src.fields.calculus import gradient_lp_norm, lp_norm
from src.fields.grid import ScalarField, VectorField
from src.observability.metrics import SOLVER_STEP_COUNTER, STEP_LATENCY

logger = logging.getLogger(__name__)

CONSERVED_COLUMNS = ["time", "l1", "l2", "linf", "circulation", "grad_u_inf"]


@dataclass
class EulerState:
    time: float
    omega: ScalarField
    velocity: Optional[VectorField] = None

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = biot_savart_fft(self.omega)

    @classmethod
    def from_vorticity(cls, omega: ScalarField, t: float = 0.0) -> "EulerState":
        return cls(time=t, omega=omega)


def euler_step(
    state: EulerState,
    dt: float,
    previous: Optional[VectorField] = None,
    reverse: bool = False,
) -> EulerState:
    """One transport step of length dt; `previous` is the velocity of the step before."""
    check_cfl(state.velocity, dt, settings.euler.euler_cfl)
    sign = -1.0 if reverse else 1.0
    velocity = ExtrapolatedVelocity(state.velocity, previous, sign=sign)
    omega = advect(state.omega, velocity, dt)
    return EulerState(time=state.time + dt, omega=omega)


def conserved_quantities(state: EulerState) -> dict:
    omega = state.omega
    return {
        "time": state.time,
        "l1": lp_norm(omega, 1.0),
        "l2": lp_norm(omega, 2.0),
        "linf": lp_norm(omega, np.inf),
        "circulation": float(omega.values.sum() * omega.grid.cell_area),
        "grad_u_inf": gradient_lp_norm(state.velocity, np.inf),
    }


@dataclass
class EulerTrajectory:
    snapshots: List[EulerState] = field(default_factory=list)
    series: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=CONSERVED_COLUMNS))
    dt: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def final(self) -> EulerState:
        return self.snapshots[-1]

    def drift(self) -> dict:
        """Largest relative change of each vorticity norm from its initial value."""
        out = {}
        for column in ("l1", "l2", "linf"):
            values = self.series[column].to_numpy(dtype=float)
            out[column] = float(np.max(np.abs(values - values[0])) / values[0]) if values[0] > 0 else 0.0
        return out

    def drift_flags(self) -> List[str]:
        limits = {"l1": settings.euler.drift_l1, "l2": settings.euler.drift_l2, "linf": settings.euler.drift_linf}
        return [
            f"{name} drift {value:.2e} above {limits[name]:.0e}"
            for name, value in self.drift().items()
            if value > limits[name]
        ]

    def velocity_at(self, t: float) -> VectorField:
        """Snapshot velocity nearest to time t."""
        index = int(np.argmin(np.abs(self.times - t)))
        return self.snapshots[index].velocity


class EulerSolver:
    """Fixed-step integration with snapshots at evenly spaced steps."""

    def __init__(self, reverse: bool = False):
        self.reverse = reverse

    def run(self, state: EulerState, T: float, dt: float, n_snapshots: Optional[int] = None) -> EulerTrajectory:
        if T < 0 or not dt > 0:
            raise ValueError(f"Need T >= 0 and dt > 0, got T={T}, dt={dt}")
        n_steps = max(int(math.ceil(T / dt - 1e-12)), 1) if T > 0 else 0
        step = T / n_steps if n_steps else dt
        n_snapshots = n_snapshots or settings.study.snapshots
        stride = max(n_steps // max(n_snapshots, 1), 1)

        trajectory = EulerTrajectory(snapshots=[state], dt=step)
        rows = [conserved_quantities(state)]
        previous = None
        t0 = state.time
        for k in range(1, n_steps + 1):
            started = time.perf_counter()
            new_state = euler_step(state, step, previous, reverse=self.reverse)
            new_state.time = t0 + k * step
            previous, state = state.velocity, new_state
            STEP_LATENCY.record(time.perf_counter() - started, {"solver": "euler"})
            SOLVER_STEP_COUNTER.add(1, {"solver": "euler"})
            rows.append(conserved_quantities(state))
            if k % stride == 0 or k == n_steps:
                trajectory.snapshots.append(state)
            logger.debug(f"Euler step {k}/{n_steps} t={state.time:.4f}")

        trajectory.series = pd.DataFrame(rows, columns=CONSERVED_COLUMNS)
        for flag in trajectory.drift_flags():
            logger.warning(f"Euler conservation: {flag}")
        logger.info(f"Euler run finished: {n_steps} steps of dt={step:.4g} to T={state.time:.4g}")
        return trajectory
