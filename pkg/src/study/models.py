"""
Data models for the convergence study: the run configuration, the
compatibility rule between nu, eps and d_eps, and the per-point records.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.optimize import brentq

from config.settings import settings
from src.biot_savart.blobs import VorticityBlob, blob_source_grid, norm_l1_linf, sample_blobs
from src.corrector.assembly import EulerCorrector
from src.cutoff.profiles import ProfileKind
from src.errors import DegenerateSweepError
from src.euler.solver import EulerTrajectory
from src.fields.grid import Grid, VectorField
from src.geometry.lattice import Geometry, ObstacleShape
from src.ns.solver import NSTrajectory

STUDY_COLUMNS = [
    "nu",
    "epsilon",
    "d_epsilon",
    "mu",
    "admissible",
    "sup_error",
    "bound_shape",
    "initial_error",
    "fitted_BT",
    "wall_seconds",
]

POWER_EXPONENTS = (1.0 / 3.0, 0.5, 2.0 / 3.0)


def scale_exponent(mu: float) -> float:
    return (1.0 + mu) / 2.0


def bound_shape(nu: float, d_epsilon: float, mu: float) -> float:
    """sqrt(nu) / d^((1+mu)/2)."""
    return math.sqrt(nu) / d_epsilon ** scale_exponent(mu)


def improved_bound_shape(nu: float, epsilon: float, d_epsilon: float, mu: float) -> float:
    """sqrt(nu) / (d^((1+mu)/2) sqrt|ln eps|), the harmonic-cutoff variant."""
    return bound_shape(nu, d_epsilon, mu) / math.sqrt(abs(math.log(epsilon)))


class DRule(str, Enum):
    EQUAL = "equal"
    POWER = "power"
    FIXED = "fixed"


class SweepConfig(BaseModel):
    """Viscosities to sweep and how eps and d_eps follow them."""

    nu: List[float] = Field(..., min_length=1, description="Viscosities")
    d_rule: DRule = Field(default=DRule.EQUAL, description="d = eps, d = eps^alpha or a fixed d")
    alpha: Optional[float] = Field(default=None, description="Exponent of the power rule")
    d_value: Optional[float] = Field(default=None, gt=0.0, le=1.0, description="d of the fixed rule")
    epsilon: Optional[List[float]] = Field(default=None, description="Explicit eps per nu; tied by the rule when absent")
    T: float = Field(default=1.0, gt=0.0, description="Horizon")

    @field_validator("nu")
    @classmethod
    def validate_nu(cls, v: List[float]) -> List[float]:
        if any(nu <= 0 for nu in v):
            raise ValueError("Viscosities must be positive")
        return v

    @model_validator(mode="after")
    def validate_rule(self) -> "SweepConfig":
        if self.d_rule is DRule.POWER:
            if self.alpha is None or not any(math.isclose(self.alpha, a, rel_tol=1e-6) for a in POWER_EXPONENTS):
                raise ValueError(f"The power rule needs alpha in {{1/3, 1/2, 2/3}}, got {self.alpha}")
        if self.d_rule is DRule.FIXED and self.d_value is None:
            raise ValueError("The fixed rule needs d_value")
        if self.epsilon is not None and len(self.epsilon) not in (1, len(self.nu)):
            raise ValueError("epsilon must hold one value or one value per nu")
        return self

    def d_for(self, epsilon: float) -> float:
        if self.d_rule is DRule.EQUAL:
            return epsilon
        if self.d_rule is DRule.POWER:
            return epsilon**self.alpha
        return self.d_value

    def epsilon_at(self, index: int) -> Optional[float]:
        if self.epsilon is None:
            return None
        return self.epsilon[0] if len(self.epsilon) == 1 else self.epsilon[index]

    @property
    def epsilon_ceiling(self) -> float:
        """Largest eps the rule allows (d <= 1 and d >= eps)."""
        return self.d_value if self.d_rule is DRule.FIXED else 1.0


class GridConfig(BaseModel):
    n: int = Field(default=256, ge=16, description="Nodes per axis of the periodic box")
    box: Optional[float] = Field(default=None, gt=0.0, description="Box side; a multiple of the region diameter when absent")


class StudyConfig(BaseModel):
    """One sweep: initial vorticity, lattice shape and exponent, sweep and grid."""

    omega0: List[VorticityBlob] = Field(..., min_length=1, description="Initial vorticity blobs")
    shape: ObstacleShape = Field(default_factory=ObstacleShape)
    mu: float = Field(default=1.0, ge=0.0, le=1.0, description="Lattice dimension exponent")
    sweep: SweepConfig
    grid: GridConfig = Field(default_factory=GridConfig)
    A: Optional[float] = Field(default=None, gt=0.0, description="Compatibility constant; calibrated when absent")
    cutoff: ProfileKind = Field(default=ProfileKind.SMOOTHSTEP, description="Cutoff arm")
    control: bool = Field(default=False, description="Obstacle-free control run")

    def m0(self) -> float:
        """|omega0|_1 + |omega0|_inf on a fine grid over the blob supports."""
        grid = blob_source_grid(self.omega0, 4 * settings.initial_data.source_nodes)
        return norm_l1_linf(sample_blobs(self.omega0, grid))


class CompatibilityRule(BaseModel):
    """Admissible points satisfy eps / d^((1+mu)/2) <= A nu / M0."""

    model_config = ConfigDict(frozen=True)

    A: float = Field(..., gt=0.0)
    M0: float = Field(..., gt=0.0)

    def ratio(self, epsilon: float, d_epsilon: float, mu: float) -> float:
        return epsilon / d_epsilon ** scale_exponent(mu)

    def threshold(self, nu: float) -> float:
        return self.A * nu / self.M0

    def admissible(self, nu: float, epsilon: float, d_epsilon: float, mu: float) -> bool:
        lhs, rhs = self.ratio(epsilon, d_epsilon, mu), self.threshold(nu)
        return lhs <= rhs or math.isclose(lhs, rhs, rel_tol=1e-9)

    def epsilon_for(self, nu: float, d_epsilon: float, mu: float) -> float:
        """Largest admissible eps at fixed d."""
        return self.threshold(nu) * d_epsilon ** scale_exponent(mu)

    def tie_epsilon(self, nu: float, d_rule: Callable[[float], float], mu: float, ceiling: float = 1.0) -> float:
        """eps on the admissibility boundary when d follows eps through d_rule."""
        target = self.threshold(nu)

        def gap(epsilon: float) -> float:
            return self.ratio(epsilon, d_rule(epsilon), mu) - target

        lo, hi = 1e-12, ceiling
        g_lo, g_hi = gap(lo), gap(hi)
        if g_lo == 0.0:
            return lo
        if g_lo * g_hi > 0 or math.isclose(g_lo, g_hi, rel_tol=1e-12):
            raise DegenerateSweepError(
                f"No isolated eps on the admissibility boundary for nu={nu:.4g}, mu={mu}: "
                f"gap {g_lo:.3g} at eps={lo:g} and {g_hi:.3g} at eps={hi:g}"
            )
        return float(brentq(gap, lo, hi, xtol=1e-15, rtol=1e-12))


class StudyRecord(BaseModel):
    """Outcome of one parameter point."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    nu: float
    epsilon: float
    d_epsilon: float
    mu: float
    admissible: bool
    bound_shape: float = Field(..., gt=0.0)
    sup_error: Optional[float] = None
    initial_error: Optional[float] = None
    fitted_BT: Optional[float] = None
    wall_seconds: float = 0.0
    status: str = "ok"
    reason: Optional[str] = None
    cutoff: ProfileKind = ProfileKind.SMOOTHSTEP
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    run: Optional[Any] = Field(default=None, exclude=True, description="Fields kept for the energy ledger")

    @property
    def completed(self) -> bool:
        return self.status == "ok" and self.sup_error is not None

    def normalized_error(self) -> Optional[float]:
        """sup error / (bound shape + initial error)."""
        if not self.completed:
            return None
        return self.sup_error / (self.bound_shape + (self.initial_error or 0.0))

    def to_row(self) -> Dict[str, Any]:
        return {column: getattr(self, column) for column in STUDY_COLUMNS}


@dataclass
class DiagnosticEnergy:
    """Ledger groups on W = u^{nu,eps} - u^eps over the snapshot times, with fitted constants."""

    series: pd.DataFrame
    constants: Dict[str, float]
    nu: float
    scale: float
    corrected: bool = True
    tracking_residual: float = 0.0

    @property
    def coefficient(self) -> float:
        """3 nu / 4 + K3 eps / d^((1+mu)/2)."""
        return 0.75 * self.nu + self.constants.get("K3", 0.0) * self.scale

    @property
    def coefficient_ok(self) -> bool:
        return self.coefficient < self.nu

    @property
    def finite(self) -> bool:
        groups = self.series.drop(columns=["time"], errors="ignore")
        return bool(np.isfinite(groups.to_numpy(dtype=float)).all())

    def summary(self) -> Dict[str, Any]:
        out = {f"ledger_{name}": value for name, value in self.constants.items()}
        out.update(
            {
                "coefficient": self.coefficient,
                "coefficient_ok": self.coefficient_ok,
                "tracking_residual": self.tracking_residual,
                "ledger_finite": self.finite,
            }
        )
        return out


@dataclass
class RateFit:
    """Least-squares slope of log(sup error) against log(shape) for one sweep."""

    slope: float
    intercept: float
    fitted_BT: float
    residuals: List[float] = field(default_factory=list)
    n_points: int = 0
    shape: str = "bound_shape"
    group: Dict[str, Any] = field(default_factory=dict)


@dataclass
class PointRun:
    """Fields of a completed point: both trajectories, the correctors and the fluid mask."""

    geometry: Geometry
    grid: Grid
    fluid: np.ndarray
    euler: EulerTrajectory
    ns: NSTrajectory
    correctors: List[EulerCorrector]
    initial_velocity: VectorField
    envelope_constant: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.ns.times


class EulerRunConfig(BaseModel):
    """Input of a single Euler run."""

    omega0: List[VorticityBlob] = Field(..., min_length=1)
    grid: GridConfig = Field(default_factory=GridConfig)
    T: float = Field(default=1.0, gt=0.0, description="Horizon")
    dt: Optional[float] = Field(default=None, gt=0.0, description="Step; CFL-limited when absent")
    n_snapshots: int = Field(default=50, ge=1)


class ObstacleConfig(BaseModel):
    epsilon: float = Field(..., gt=0.0)
    d_epsilon: float = Field(..., gt=0.0, le=1.0)
    mu: float = Field(default=1.0, ge=0.0, le=1.0)
    shape: ObstacleShape = Field(default_factory=ObstacleShape)


class TaylorGreenConfig(BaseModel):
    k: int = Field(default=1, ge=1, description="Periods across the box")
    amplitude: float = Field(default=1.0)


class NSRunConfig(BaseModel):
    """Input of a single penalized Navier-Stokes run: blob or Taylor-Green initial data."""

    nu: float = Field(..., ge=0.0, description="Kinematic viscosity")
    T: float = Field(default=1.0, gt=0.0, description="Horizon")
    grid: GridConfig = Field(default_factory=GridConfig)
    omega0: Optional[List[VorticityBlob]] = None
    taylor_green: Optional[TaylorGreenConfig] = None
    obstacles: Optional[ObstacleConfig] = None
    dt: Optional[float] = Field(default=None, gt=0.0)
    n_snapshots: int = Field(default=50, ge=1)

    @model_validator(mode="after")
    def validate_initial_data(self) -> "NSRunConfig":
        if (self.omega0 is None) == (self.taylor_green is None):
            raise ValueError("Give exactly one of omega0 and taylor_green")
        if self.taylor_green is not None and self.grid.box is None:
            raise ValueError("Taylor-Green runs need an explicit box side")
        return self
