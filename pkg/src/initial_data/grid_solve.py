"""
Exterior initial velocity u_0^eps for any obstacle shape.

The stream function is psi = psi_0 + sum_b q_b G(x - x_b), with point charges
q_b on the solid nodes bordering the fluid and G the logarithmic Green
function. Charges are chosen so that psi is constant on each obstacle's ring
and each obstacle carries zero total charge (zero circulation). The ring
system is solved once per basis right-hand side, and the constants follow
from an n1*n2 capacitance system.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, ndimage
from scipy.sparse import linalg as splinalg

from config.settings import settings
from src.biot_savart.blobs import VorticityInput, vorticity_on
from src.biot_savart.kernel import biot_savart_fft, stream_function_fft
from src.errors import SingularSystemError, SolverError, SupportError
from src.fields.grid import Grid, ScalarField, VectorField
from src.fields.poisson import SELF_CELL_LOG, poisson_freespace
from src.geometry.lattice import Geometry
from src.geometry.masks import label_nodes

logger = logging.getLogger(__name__)


@dataclass
class ExteriorSolution:
    velocity: VectorField
    psi: ScalarField
    constants: np.ndarray
    charges: np.ndarray
    ring: np.ndarray


def boundary_ring(geometry: Geometry, grid: Grid):
    """Solid nodes with a fluid 4-neighbour, the solid mask and the owning obstacle per node."""
    solid, _, labels = label_nodes(geometry, grid)
    ring = ndimage.binary_dilation(~solid) & solid
    return ring, solid, labels


def _ring_solver(points: np.ndarray, ring: np.ndarray, grid: Grid) -> Callable[[np.ndarray], np.ndarray]:
    """Solve G q = b on the ring, dense when small, matrix-free GMRES otherwise."""
    n = len(points)
    self_value = (np.log(grid.h) + SELF_CELL_LOG) / (2.0 * np.pi)
    if n <= settings.initial_data.dense_ring_limit:
        r = np.hypot(points[:, None, 0] - points[None, :, 0], points[:, None, 1] - points[None, :, 1])
        np.fill_diagonal(r, 1.0)
        G = np.log(r) / (2.0 * np.pi)
        np.fill_diagonal(G, self_value)
        condition = np.linalg.cond(G)
        if condition > settings.initial_data.capacitance_condition:
            raise SingularSystemError(f"Ring single-layer matrix is singular (condition {condition:.2e})")
        factor = linalg.lu_factor(G)
        return lambda rhs: linalg.lu_solve(factor, rhs)

    def matvec(q: np.ndarray) -> np.ndarray:
        charges = np.zeros(grid.shape)
        charges[ring] = q / grid.cell_area
        return poisson_freespace(ScalarField(grid, charges), check_support=False).values[ring]

    operator = splinalg.LinearOperator((n, n), matvec=matvec, dtype=float)

    def solve(rhs: np.ndarray) -> np.ndarray:
        columns = []
        for b in np.atleast_2d(rhs.T):
            q, info = splinalg.gmres(operator, b, rtol=1e-10, maxiter=500)
            if info != 0:
                residual = float(np.linalg.norm(matvec(q) - b) / (np.linalg.norm(b) or 1.0))
                raise SolverError("Ring single-layer GMRES did not converge", residual)
            columns.append(q)
        return np.column_stack(columns)

    return solve


def solve_exterior(geometry: Geometry, omega0: VorticityInput, grid: Grid) -> ExteriorSolution:
    omega = vorticity_on(omega0, grid)
    psi0 = stream_function_fft(omega)
    if geometry.count == 0:
        return ExteriorSolution(
            velocity=biot_savart_fft(omega), psi=psi0, constants=np.zeros(0), charges=np.zeros(0),
            ring=np.zeros(grid.shape, dtype=bool),
        )

    ring, solid, labels = boundary_ring(geometry, grid)
    if np.any(omega.values[solid] != 0.0):
        raise SupportError("Initial vorticity must vanish on every obstacle")

    X, Y = grid.mesh()
    points = np.column_stack([X[ring], Y[ring]])
    owner = labels[ring]
    present = np.unique(owner)
    E = (owner[:, None] == present[None, :]).astype(float)

    solve = _ring_solver(points, ring, grid)
    solution = solve(np.column_stack([-psi0.values[ring], E]))
    base, basis = solution[:, 0], solution[:, 1:]
    capacitance = E.T @ basis
    condition = np.linalg.cond(capacitance)
    if condition > settings.initial_data.capacitance_condition:
        raise SingularSystemError(f"Capacitance system is singular (condition {condition:.2e})")
    constants = np.linalg.solve(capacitance, -E.T @ base)
    charges = base + basis @ constants

    augmented = omega.values.copy()
    augmented[ring] += charges / grid.cell_area
    augmented_field = ScalarField(grid, augmented)
    velocity = biot_savart_fft(augmented_field, check_support=False)
    velocity.values[:, solid] = 0.0
    psi = poisson_freespace(augmented_field, check_support=False)
    logger.info(
        f"Exterior solve: {len(points)} ring nodes on {len(present)} obstacles, "
        f"max |charge sum| {np.max(np.abs(E.T @ charges)):.2e}"
    )
    return ExteriorSolution(velocity=velocity, psi=psi, constants=constants, charges=charges, ring=ring)


def u0_eps_grid(geometry: Geometry, omega0: VorticityInput, grid: Grid) -> VectorField:
    """Divergence-free velocity tangent to every obstacle with zero circulations."""
    return solve_exterior(geometry, omega0, grid).velocity
