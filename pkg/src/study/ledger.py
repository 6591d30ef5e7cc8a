"""
Energy ledger of W = u^{nu,eps} - u^eps along a completed point.

At each snapshot the groups of the energy identity are measured on the
fluid nodes:

    I1 = -int W . (W . grad) u^eps
    I2 =  int (u^eps - u^E) . (u^eps . grad) W
    I3 =  int W . (h^eps . grad) u^E
    J  = -nu int grad W : grad u^eps
    H1 =  int phi^eps W . grad p^E
    H2 =  int W . d_t h^eps

and their sum is compared with d/dt (1/2)|W|^2 + nu |grad W|^2. Each group
is then set against its predicted bound to fit a constant; K3 decides
whether the gradient coefficient stays below nu.
"""

import logging
import math
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from src.corrector.assembly import corrector_time_derivative
from src.euler.diagnostics import euler_pressure
from src.fields.calculus import advective_derivative, grad, gradient_lp_norm, integrate, jacobian, lp_norm
from src.fields.grid import VectorField
from src.study.models import DiagnosticEnergy, PointRun, StudyRecord, scale_exponent

logger = logging.getLogger(__name__)

LEDGER_GROUPS = ["I1", "I2", "I3", "J", "H1", "H2"]
ENERGY_COLUMNS = ["time", *LEDGER_GROUPS, "total", "lhs", "w_l2", "grad_w_l2"]


def _dot(a: VectorField, b: VectorField) -> np.ndarray:
    return a.x * b.x + a.y * b.y


def _h_time_derivatives(run: PointRun) -> List[VectorField]:
    """Centred differences of h^eps between snapshots, one-sided at the ends."""
    correctors, times = run.correctors, run.times
    n = len(correctors)
    if n < 2:
        return [VectorField.zeros(run.grid) for _ in correctors]
    out = []
    for k in range(n):
        lo, hi = max(k - 1, 0), min(k + 1, n - 1)
        out.append(corrector_time_derivative(correctors[lo].h_eps, correctors[hi].h_eps, times[hi] - times[lo]))
    return out


def ledger_series(run: PointRun, nu: float, corrected: bool = True) -> pd.DataFrame:
    """
    Ledger groups per snapshot. With corrected=False u^eps is replaced by
    u^E (no cutoff, no corrector), the uncorrected comparison.
    """
    fluid = run.fluid
    grid = run.grid
    dt_h = _h_time_derivatives(run) if corrected else None
    rows = []
    for k, state in enumerate(run.ns.snapshots):
        euler_state = run.euler.snapshots[int(np.argmin(np.abs(run.euler.times - state.time)))]
        u_e = euler_state.velocity
        if corrected:
            corrector = run.correctors[k]
            u_eps, h_eps, phi = corrector.u_eps, corrector.h_eps, corrector.phi.values
        else:
            u_eps, h_eps, phi = u_e, VectorField.zeros(grid), np.ones(grid.shape)
        w = state.u - u_eps
        grad_p = grad(euler_pressure(euler_state))
        grad_product = np.sum(jacobian(w) * jacobian(u_eps), axis=(0, 1))
        row = {
            "time": state.time,
            "I1": -integrate(_dot(w, advective_derivative(u_eps, w)), grid, fluid),
            "I2": integrate(_dot(u_eps - u_e, advective_derivative(w, u_eps)), grid, fluid),
            "I3": integrate(_dot(w, advective_derivative(u_e, h_eps)), grid, fluid),
            "J": -nu * integrate(grad_product, grid, fluid),
            "H1": integrate(phi * _dot(w, grad_p), grid, fluid),
            "H2": integrate(_dot(w, dt_h[k]), grid, fluid) if corrected else 0.0,
            "w_l2": lp_norm(w, 2.0, fluid),
            "grad_w_l2": gradient_lp_norm(w, 2.0, fluid),
        }
        row["total"] = sum(row[name] for name in LEDGER_GROUPS)
        rows.append(row)

    series = pd.DataFrame(rows, columns=ENERGY_COLUMNS)
    times = series["time"].to_numpy(dtype=float)
    energy = 0.5 * series["w_l2"].to_numpy(dtype=float) ** 2
    rate = np.gradient(energy, times) if len(times) > 1 else np.zeros_like(energy)
    series["lhs"] = rate + nu * series["grad_w_l2"].to_numpy(dtype=float) ** 2
    return series


def _fit(excess: np.ndarray, shape: float) -> float:
    """Smallest K with measured <= absorbed + K shape at every time."""
    if shape <= 0 or not np.isfinite(shape):
        return math.inf
    return float(np.max(np.maximum(excess, 0.0)) / shape) if excess.size else 0.0


def fit_constants(
    series: pd.DataFrame, nu: float, epsilon: float, d_epsilon: float, mu: float, envelope_constant: float
) -> Dict[str, float]:
    """Constants of the group bounds, each with its absorbed gradient share removed first."""
    t = series["time"].to_numpy(dtype=float)
    w2 = series["w_l2"].to_numpy(dtype=float) ** 2
    gw2 = series["grad_w_l2"].to_numpy(dtype=float) ** 2
    d1 = d_epsilon ** scale_exponent(mu)
    d2 = d_epsilon ** (1.0 + mu)
    c0 = envelope_constant

    # I1 <= C0 e^{C0 t} |W|^2 + K3 (eps / d^((1+mu)/2)) |grad W|^2, fitted pointwise in time
    i1_excess = np.abs(series["I1"].to_numpy(dtype=float)) - c0 * np.exp(c0 * t) * w2
    with np.errstate(divide="ignore", invalid="ignore"):
        k3_samples = np.where(gw2 > 0, np.maximum(i1_excess, 0.0) / ((epsilon / d1) * gw2), 0.0)
    absolute = {name: np.abs(series[name].to_numpy(dtype=float)) for name in LEDGER_GROUPS}
    return {
        "C0": c0,
        "K3": float(np.max(k3_samples)) if k3_samples.size else 0.0,
        "K4": _fit(absolute["I2"] - nu / 8.0 * gw2, epsilon**2 / (nu * d2)),
        "K5": _fit(absolute["I3"] - nu / 8.0 * gw2, epsilon**2 / (nu * d1)),
        "K7": _fit(absolute["J"] - nu / 4.0 * gw2, nu / d2),
        "K8": _fit(absolute["H1"] - nu / 8.0 * gw2, epsilon**2 / (nu * d2)),
        "K9": _fit(absolute["H2"] - nu / 8.0 * gw2, epsilon**3 / (nu * d1)),
    }


def _tracking_residual(series: pd.DataFrame) -> float:
    """max |lhs - total| relative to the largest lhs."""
    if series.empty:
        return 0.0
    lhs = series["lhs"].to_numpy(dtype=float)
    gap = np.abs(lhs - series["total"].to_numpy(dtype=float))
    scale = max(float(np.max(np.abs(lhs))), np.finfo(float).tiny)
    return float(np.max(gap) / scale)


def ledger_report(record: StudyRecord, corrected: bool = True) -> DiagnosticEnergy:
    """Ledger of a point run with its fitted constants and the gradient-coefficient check."""
    scale = record.epsilon / record.d_epsilon ** scale_exponent(record.mu)
    run: Optional[PointRun] = record.run
    if run is None:
        logger.warning(f"No stored fields for nu={record.nu:.4g} eps={record.epsilon:.4g}; ledger is empty")
        return DiagnosticEnergy(
            series=pd.DataFrame(columns=ENERGY_COLUMNS), constants={}, nu=record.nu, scale=scale, corrected=corrected
        )

    series = ledger_series(run, record.nu, corrected=corrected)
    constants = fit_constants(series, record.nu, record.epsilon, record.d_epsilon, record.mu, run.envelope_constant)
    report = DiagnosticEnergy(
        series=series,
        constants=constants,
        nu=record.nu,
        scale=scale,
        corrected=corrected,
        tracking_residual=_tracking_residual(series),
    )
    label = "corrected" if corrected else "uncorrected"
    logger.info(
        f"Ledger ({label}) nu={record.nu:.4g} eps={record.epsilon:.4g}: K3={constants['K3']:.4g}, "
        f"coefficient {report.coefficient:.4g} vs nu, tracking residual {report.tracking_residual:.2e}"
    )
    if corrected and record.admissible and not report.coefficient_ok:
        logger.warning(f"Gradient coefficient {report.coefficient:.4g} is not below nu={record.nu:.4g}")
    return report
