"""
Assembly of the lattice corrector h^eps and of u^eps = phi^eps u^E - h^eps.

Each obstacle contributes one cell problem on the reference cell. With
x = z + eps xi the right-hand side is f(xi) = eps (grad phi^eps . u^E)(x), and
the cell solution is mapped back by h^eps(x) = h_k((x - z) / eps), so that
div h^eps = grad phi^eps . u^E.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from config.settings import settings
from src.corrector.cell import CellSolution, CellSolver, get_cell_solver
from src.cutoff.lattice_cutoff import lattice_cutoff_with_gradient
from src.cutoff.profiles import CutoffProfile, obstacle_cutoff
from src.errors import CellSolveError, NonZeroMeanError, SolverError
from src.fields.calculus import SplineInterpolator, div, grad, gradient_lp_norm, lp_norm
from src.fields.grid import ScalarField, VectorField
from src.geometry.lattice import Geometry
from src.geometry.masks import label_nodes

logger = logging.getLogger(__name__)


@dataclass
class EulerCorrector:
    """Everything built for one Euler velocity snapshot."""

    u_eps: VectorField
    h_eps: VectorField
    phi: ScalarField
    grad_phi: VectorField
    cells: List[CellSolution] = field(default_factory=list)
    mean_defects: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def divergence_residual(self) -> float:
        """L2 norm of the discrete divergence of u^eps over the fluid."""
        return lp_norm(div(self.u_eps), 2.0)


def cell_rhs(
    solver: CellSolver,
    center: Tuple[float, float],
    epsilon: float,
    velocity: SplineInterpolator,
    cutoff_gradient: Optional[SplineInterpolator] = None,
) -> np.ndarray:
    """
    f(xi) = eps (grad phi^eps . u^E)(z + eps xi) on the reference cell grid.

    grad phi^eps is the analytic smoothstep gradient unless `cutoff_gradient`
    interpolates a supplied one.
    """
    X, Y = solver.grid.mesh()
    points = np.stack([center[0] + epsilon * X, center[1] + epsilon * Y], axis=-1)
    u = velocity(points)
    if cutoff_gradient is None:
        # grad phi^eps = -grad phi_k inside the inflated cell of obstacle k
        _, grad_k = obstacle_cutoff(points, center, epsilon, CutoffProfile.smoothstep())
        f = -epsilon * (grad_k[..., 0] * u[0] + grad_k[..., 1] * u[1])
    else:
        g = cutoff_gradient(points)
        f = epsilon * (g[0] * u[0] + g[1] * u[1])
    return np.where(solver.mask.values, f, 0.0)


def project_cell_mean(solver: CellSolver, f: np.ndarray, index: Tuple[int, int]) -> Tuple[np.ndarray, float]:
    """
    Remove the discretization defect of the cell mean.

    Defects above mean_defect_warning are logged, defects above
    assembly_mean_tolerance reject the cell.
    """
    fluid = solver.mask.values
    total = float(f[fluid].sum())
    scale = float(np.abs(f[fluid]).sum())
    defect = abs(total) / scale if scale > 0 else 0.0
    if defect > settings.corrector.assembly_mean_tolerance:
        area = solver.delta**2
        raise CellSolveError(index, NonZeroMeanError(total * area, scale * area, "Cell right-hand side"))
    if defect > settings.corrector.mean_defect_warning:
        logger.warning(f"Cell {index}: projecting away a mean defect of {defect:.2e}")
    projected = np.where(fluid, f - total / solver.n_cells, 0.0)
    return projected, defect


def _solve_cells(solver: CellSolver, rhs: List[np.ndarray], indices: List[Tuple[int, int]]) -> List[CellSolution]:
    try:
        return solver.solve_many(rhs)
    except SolverError:
        # locate the failing obstacle
        solutions = []
        for f, index in zip(rhs, indices):
            try:
                solutions.extend(solver.solve([f]))
            except SolverError as error:
                raise CellSolveError(index, error) from error
        return solutions


def build_corrector(
    geometry: Geometry,
    u_e: VectorField,
    phi_eps: Optional[ScalarField] = None,
    resolution: Optional[int] = None,
    grad_phi: Optional[VectorField] = None,
) -> EulerCorrector:
    """
    Solve every cell problem for one velocity field and assemble h^eps and u^eps.

    Without phi_eps the smoothstep lattice cutoff and its analytic gradient are
    used. A supplied phi_eps drives the cell right-hand sides through grad_phi,
    or through its discrete gradient when grad_phi is not given.
    """
    grid = u_e.grid
    cutoff_gradient = None
    if phi_eps is None:
        if grad_phi is not None:
            raise ValueError("grad_phi needs the cutoff it belongs to")
        phi_eps, grad_phi = lattice_cutoff_with_gradient(geometry, grid)
    else:
        if phi_eps.grid != grid:
            raise ValueError("phi_eps and u^E must share a grid")
        if grad_phi is None:
            grad_phi = grad(phi_eps)
        elif grad_phi.grid != grid:
            raise ValueError("grad_phi and u^E must share a grid")
        cutoff_gradient = SplineInterpolator(grad_phi, order=1, outside="nearest")

    if geometry.count == 0:
        return EulerCorrector(u_eps=u_e * phi_eps, h_eps=VectorField.zeros(grid), phi=phi_eps, grad_phi=grad_phi)

    solver = get_cell_solver(geometry.shape, resolution or settings.corrector.cell_resolution)
    velocity = SplineInterpolator(u_e, outside="nearest")
    eps = geometry.epsilon

    rhs, defects = [], {}
    for center, index in zip(geometry.centers, geometry.indices):
        f = cell_rhs(solver, center, eps, velocity, cutoff_gradient)
        projected, defects[index] = project_cell_mean(solver, f, index)
        rhs.append(projected)
    cells = _solve_cells(solver, rhs, list(geometry.indices))

    solid, _, labels = label_nodes(geometry, grid)
    h_values = np.zeros((2,) + grid.shape)
    X, Y = grid.mesh()
    for k, (center, cell) in enumerate(zip(geometry.centers, cells)):
        owned = labels == k
        if not owned.any():
            continue
        local = np.stack([(X[owned] - center[0]) / eps, (Y[owned] - center[1]) / eps], axis=-1)
        h_values[:, owned] = SplineInterpolator(cell.h, order=1, outside="zero")(local)
    h_values[:, solid] = 0.0
    h_eps = VectorField(grid, h_values)

    worst = max(defects.values()) if defects else 0.0
    logger.info(
        f"Corrector assembled: {geometry.count} cells, eps={eps:.4g}, "
        f"worst mean defect {worst:.2e}, max residual {max(c.residual for c in cells):.2e}"
    )
    return EulerCorrector(
        u_eps=u_e * phi_eps - h_eps,
        h_eps=h_eps,
        phi=phi_eps,
        grad_phi=grad_phi,
        cells=cells,
        mean_defects=defects,
    )


def assemble_h_epsilon(
    geometry: Geometry,
    u_e: VectorField,
    phi_eps: Optional[ScalarField] = None,
    grad_phi: Optional[VectorField] = None,
) -> VectorField:
    return build_corrector(geometry, u_e, phi_eps, grad_phi=grad_phi).h_eps


def euler_corrector(
    geometry: Geometry,
    u_e: VectorField,
    phi_eps: Optional[ScalarField] = None,
    grad_phi: Optional[VectorField] = None,
) -> VectorField:
    """u^eps = phi^eps u^E - h^eps: divergence free, zero on the obstacles."""
    return build_corrector(geometry, u_e, phi_eps, grad_phi=grad_phi).u_eps


def corrector_time_derivative(h_prev: VectorField, h_next: VectorField, dt: float) -> VectorField:
    if not dt > 0:
        raise ValueError(f"Snapshot spacing must be positive, got dt={dt}")
    return (h_next - h_prev) * (1.0 / dt)


@dataclass
class CorrectorBounds:
    """Measured corrector quantities next to their predicted shapes."""

    epsilon: float
    d_epsilon: float
    mu: float
    h_l4: float
    dt_h_l2: Optional[float]
    grad_h_l2: float
    u_gap_l4: float

    @property
    def sqrt_shape(self) -> float:
        """sqrt(eps) / d^((1+mu)/4)."""
        return np.sqrt(self.epsilon) / self.d_epsilon ** ((1.0 + self.mu) / 4.0)

    @property
    def gradient_shape(self) -> float:
        """1 / d^((1+mu)/2)."""
        return 1.0 / self.d_epsilon ** ((1.0 + self.mu) / 2.0)

    def ratios(self) -> Dict[str, float]:
        ratios = {
            "h_l4": self.h_l4 / self.sqrt_shape,
            "grad_h_l2": self.grad_h_l2 / self.gradient_shape,
            "u_gap_l4": self.u_gap_l4 / self.sqrt_shape,
        }
        if self.dt_h_l2 is not None:
            ratios["dt_h_l2"] = self.dt_h_l2 / self.sqrt_shape
        return ratios


def corrector_bounds(
    geometry: Geometry,
    corrector: EulerCorrector,
    u_e: VectorField,
    dt_h: Optional[VectorField] = None,
) -> CorrectorBounds:
    bounds = CorrectorBounds(
        epsilon=geometry.epsilon,
        d_epsilon=geometry.d_epsilon,
        mu=geometry.mu,
        h_l4=lp_norm(corrector.h_eps, 4.0),
        dt_h_l2=lp_norm(dt_h, 2.0) if dt_h is not None else None,
        grad_h_l2=gradient_lp_norm(corrector.h_eps, 2.0),
        u_gap_l4=lp_norm(u_e - corrector.u_eps, 4.0),
    )
    logger.debug(f"Corrector bound ratios at eps={geometry.epsilon:.4g}: {bounds.ratios()}")
    return bounds
