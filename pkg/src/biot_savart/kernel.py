"""
Full-plane Biot-Savart law u = K * omega with K(z) = z_perp / (2 pi |z|^2),
z_perp = (-z2, z1), so that curl u = omega.

The FFT path convolves with the kernel sampled on the doubled lattice; the
direct path sums the same midpoint rule point by point. Both drop the self
cell, where the odd kernel averages to zero.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy import fft

from config.settings import settings
from src.fields.calculus import gradient_lp_norm, lp_norm
from src.fields.grid import Grid, ScalarField, VectorField
from src.fields.poisson import check_inner_support, convolve_doubled, doubled_offsets, poisson_freespace

logger = logging.getLogger(__name__)

# Bound on the pairwise matrix size per direct-summation chunk.
_PAIR_BUDGET = 4_000_000


@lru_cache(maxsize=16)
def velocity_kernel_hat(nx: int, ny: int, h: float) -> Tuple[np.ndarray, np.ndarray]:
    grid = Grid(origin=(0.0, 0.0), h=h, nx=nx, ny=ny)
    dy, dx = doubled_offsets(grid)
    r2 = dx**2 + dy**2
    r2[0, 0] = 1.0
    kx = -dy / (2.0 * np.pi * r2)
    ky = dx / (2.0 * np.pi * r2)
    kx[0, 0] = ky[0, 0] = 0.0
    return fft.rfft2(kx), fft.rfft2(ky)


def biot_savart_fft(omega: ScalarField, check_support: bool = True) -> VectorField:
    grid = omega.grid
    if check_support:
        check_inner_support(omega, "Biot-Savart")
    if not np.any(omega.values):
        return VectorField.zeros(grid)
    kx_hat, ky_hat = velocity_kernel_hat(grid.nx, grid.ny, grid.h)
    ux = convolve_doubled(omega.values, kx_hat, grid)
    uy = convolve_doubled(omega.values, ky_hat, grid)
    return VectorField.from_components(grid, ux, uy)


def stream_function_fft(omega: ScalarField, check_support: bool = True) -> ScalarField:
    """psi with Laplacian(psi) = omega, u = perp_grad(psi)."""
    return poisson_freespace(omega, check_support=check_support)


def _chunked(n_targets: int, n_sources: int, evaluate, workers: Optional[int], width: int) -> np.ndarray:
    """Evaluate target chunks (optionally on a thread pool) into one (n_targets, width) array."""
    result = np.zeros((n_targets, width))
    if n_sources == 0 or n_targets == 0:
        return result
    workers = workers or settings.biot_savart.direct_workers
    chunk = max(1, min(settings.biot_savart.direct_chunk_size, _PAIR_BUDGET // max(n_sources, 1)))
    starts = range(0, n_targets, chunk)

    def _run(start: int) -> Tuple[int, np.ndarray]:
        return start, evaluate(slice(start, min(start + chunk, n_targets)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_run, starts))
    else:
        blocks = [_run(s) for s in starts]
    for start, values in blocks:
        result[start:start + values.shape[0]] = values
    return result


def point_vortex_velocity(
    sources: np.ndarray,
    strengths: np.ndarray,
    targets: np.ndarray,
    exclude_radius: float = 0.0,
    workers: Optional[int] = None,
) -> np.ndarray:
    """Velocity (M, 2) induced at targets by point vortices; sources closer than exclude_radius are skipped."""
    sources = np.asarray(sources, dtype=float).reshape(-1, 2)
    strengths = np.asarray(strengths, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    cutoff2 = exclude_radius**2

    def _evaluate(block: slice) -> np.ndarray:
        dx = targets[block, None, 0] - sources[None, :, 0]
        dy = targets[block, None, 1] - sources[None, :, 1]
        r2 = dx * dx + dy * dy
        inv = np.zeros_like(r2)
        keep = r2 > cutoff2 if cutoff2 > 0 else r2 > 0
        inv[keep] = 1.0 / r2[keep]
        return np.column_stack([-(dy * inv) @ strengths, (dx * inv) @ strengths]) / (2.0 * np.pi)

    return _chunked(targets.shape[0], sources.shape[0], _evaluate, workers, 2)


def point_vortex_stream(
    sources: np.ndarray,
    strengths: np.ndarray,
    targets: np.ndarray,
    self_log: float = 0.0,
    workers: Optional[int] = None,
) -> np.ndarray:
    """Stream function (1/2pi) sum s ln|x - y| at targets; coincident pairs use ln|x - y| = self_log."""
    sources = np.asarray(sources, dtype=float).reshape(-1, 2)
    strengths = np.asarray(strengths, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)

    def _evaluate(block: slice) -> np.ndarray:
        r = np.hypot(targets[block, None, 0] - sources[None, :, 0], targets[block, None, 1] - sources[None, :, 1])
        logs = np.full_like(r, self_log)
        np.log(r, out=logs, where=r > 0)
        return (logs @ strengths)[:, None] / (2.0 * np.pi)

    return _chunked(targets.shape[0], sources.shape[0], _evaluate, workers, 1)[:, 0]


def vortex_sources(omega: ScalarField) -> Tuple[np.ndarray, np.ndarray]:
    """Nonzero nodes of omega and their circulations omega * h^2."""
    support = omega.values != 0.0
    X, Y = omega.grid.mesh()
    return np.column_stack([X[support], Y[support]]), omega.values[support] * omega.grid.cell_area


def biot_savart_direct(omega: ScalarField, points: np.ndarray, workers: Optional[int] = None) -> np.ndarray:
    """Midpoint quadrature of the Biot-Savart integral at points, self cell omitted."""
    sources, strengths = vortex_sources(omega)
    return point_vortex_velocity(sources, strengths, points, exclude_radius=0.5 * omega.grid.h, workers=workers)


@dataclass
class VelocityBoundReport:
    linf_ratio: float
    cz_ratio: float
    p: float
    flags: List[str] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.flags)


def check_velocity_bounds(omega: ScalarField, u: VectorField, p: float = 4.0) -> VelocityBoundReport:
    """
    |u|_inf / (|omega|_inf |omega|_1)^(1/2) and |grad u|_p / |omega|_p,
    flagged against the configured ceilings.
    """
    omega_inf = lp_norm(omega, np.inf)
    if omega_inf == 0.0:
        return VelocityBoundReport(linf_ratio=0.0, cz_ratio=0.0, p=p)
    omega_1 = lp_norm(omega, 1.0)
    linf_ratio = lp_norm(u, np.inf) / np.sqrt(omega_inf * omega_1)
    cz_ratio = gradient_lp_norm(u, p) / lp_norm(omega, p)
    report = VelocityBoundReport(linf_ratio=linf_ratio, cz_ratio=cz_ratio, p=p)
    ceilings = settings.biot_savart
    if linf_ratio > ceilings.linf_ratio_ceiling:
        report.flags.append(f"linf ratio {linf_ratio:.3f} above {ceilings.linf_ratio_ceiling}")
    if cz_ratio > ceilings.cz_ratio_ceiling:
        report.flags.append(f"Calderon-Zygmund ratio {cz_ratio:.3f} above {ceilings.cz_ratio_ceiling}")
    for flag in report.flags:
        logger.warning(f"Velocity bound check: {flag}")
    return report
