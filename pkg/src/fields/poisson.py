"""
Poisson solvers: exact inversion of the periodic five-point Laplacian and a
free-space solver by domain doubling with the logarithmic Green function.
"""

import logging
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy import fft

from config.settings import settings
from src.errors import NonZeroMeanError, SupportError
from src.fields.grid import Grid, ScalarField

logger = logging.getLogger(__name__)

# Mean of ln|x| over a square cell of side h is ln(h) + SELF_CELL_LOG.
SELF_CELL_LOG = 0.5 * np.log(0.5) - 1.5 + 0.25 * np.pi


def wavenumbers(grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Angular wavenumbers (ky, kx) broadcastable to the grid shape."""
    kx = 2.0 * np.pi * fft.fftfreq(grid.nx, d=grid.h)
    ky = 2.0 * np.pi * fft.fftfreq(grid.ny, d=grid.h)
    return ky[:, None], kx[None, :]


def poisson_periodic(rhs: ScalarField) -> ScalarField:
    """Solve the five-point discrete Poisson problem on a periodic grid, mean-zero gauge."""
    grid = rhs.grid
    if not grid.periodic:
        raise ValueError("poisson_periodic needs a periodic grid")
    scale = float(np.max(np.abs(rhs.values))) if rhs.values.size else 0.0
    mean = float(np.mean(rhs.values))
    if abs(mean) > 1e-8 * max(scale, np.finfo(float).tiny):
        raise NonZeroMeanError(mean, scale, "Periodic Poisson problem")
    if scale == 0.0:
        return ScalarField.zeros(grid)

    ky, kx = wavenumbers(grid)
    eigen = (2.0 * np.cos(kx * grid.h) - 2.0) / grid.h**2 + (2.0 * np.cos(ky * grid.h) - 2.0) / grid.h**2
    eigen[0, 0] = 1.0
    phi_hat = fft.fft2(rhs.values - mean) / eigen
    phi_hat[0, 0] = 0.0
    return ScalarField(grid, np.real(fft.ifft2(phi_hat)))


def check_inner_support(field: ScalarField, context: str, tolerance: float = None) -> None:
    """Raise SupportError when the field has mass outside the inner half of its box."""
    tolerance = settings.biot_savart.support_tolerance if tolerance is None else tolerance
    values = np.abs(field.values)
    peak = float(values.max()) if values.size else 0.0
    if peak == 0.0:
        return
    ny, nx = values.shape
    outer = np.ones_like(values, dtype=bool)
    outer[ny // 4: ny - ny // 4, nx // 4: nx - nx // 4] = False
    leak = float(values[outer].max())
    if leak > tolerance * peak:
        raise SupportError(
            f"{context}: field reaches {leak / peak:.2e} of its peak outside the inner half of the box; "
            f"enlarge the box or move the support"
        )


def doubled_offsets(grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Node offsets (dy, dx) on the doubled lattice in FFT wrap-around order."""
    ix = np.arange(2 * grid.nx)
    iy = np.arange(2 * grid.ny)
    ix = np.where(ix < grid.nx, ix, ix - 2 * grid.nx)
    iy = np.where(iy < grid.ny, iy, iy - 2 * grid.ny)
    return (grid.h * iy)[:, None] * np.ones((1, 2 * grid.nx)), np.ones((2 * grid.ny, 1)) * (grid.h * ix)[None, :]


def convolve_doubled(values: np.ndarray, kernel_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """Aperiodic discrete convolution h^2 * sum K(x_i - y_j) values_j via zero padding."""
    padded = np.zeros((2 * grid.ny, 2 * grid.nx))
    padded[: grid.ny, : grid.nx] = values
    full = fft.irfft2(fft.rfft2(padded) * kernel_hat, s=padded.shape)
    return grid.cell_area * full[: grid.ny, : grid.nx]


@lru_cache(maxsize=16)
def log_kernel_hat(nx: int, ny: int, h: float) -> np.ndarray:
    grid = Grid(origin=(0.0, 0.0), h=h, nx=nx, ny=ny)
    dy, dx = doubled_offsets(grid)
    r = np.hypot(dx, dy)
    r[0, 0] = 1.0
    kernel = np.log(r) / (2.0 * np.pi)
    kernel[0, 0] = (np.log(h) + SELF_CELL_LOG) / (2.0 * np.pi)
    return fft.rfft2(kernel)


def poisson_freespace(rhs: ScalarField, check_support: bool = True) -> ScalarField:
    """
    Free-space solution of Laplacian(phi) = rhs, phi = (1/2pi) ln|.| * rhs.

    The convolution is the midpoint rule on the grid nodes, with the cell
    average of the kernel on the self cell.
    """
    grid = rhs.grid
    if check_support:
        check_inner_support(rhs, "Free-space Poisson problem")
    kernel_hat = log_kernel_hat(grid.nx, grid.ny, grid.h)
    return ScalarField(grid, convolve_doubled(rhs.values, kernel_hat, grid))
