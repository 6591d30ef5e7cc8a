"""
Divergence problem on the reference cell U = (-2,2)^2 minus K.

Given mean-zero f, find h with div h = f in U and h = 0 on the boundary of U,
taken as the minimizer of |grad h|^2 under that constraint. The problem is
discretized on a staggered (MAC) grid: f lives on cell centres, h1 on vertical
faces, h2 on horizontal faces. Faces touching a non-fluid cell are boundary
and carry zero. The saddle-point matrix

    [ L   D^T ] [ h ]   [ 0 ]
    [ D   0   ] [ q ] = [ f ]

(one constraint row dropped, since the rows of D sum to zero) is factorized
once per shape and resolution and shared by every obstacle and time.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from config.settings import settings
from src.errors import NonZeroMeanError, SolverError
from src.fields.calculus import gradient_lp_norm, lp_norm
from src.fields.grid import Grid, ScalarField, VectorField
from src.geometry.lattice import ObstacleShape
from src.geometry.masks import RegionMask, reference_cell_grid, reference_cell_mask
from src.observability.metrics import CELL_SOLVE_COUNTER

logger = logging.getLogger(__name__)


@dataclass
class CellSolution:
    """Face values of one solve, its cell-centred field and the algebraic residual."""

    faces: np.ndarray
    h: VectorField
    residual: float

    def sobolev_norm(self, p: float) -> float:
        """|h|_{W^{1,p}(U)} = (|h|_p^p + |grad h|_p^p)^(1/p)."""
        if np.isinf(p):
            return max(lp_norm(self.h, p), gradient_lp_norm(self.h, p))
        return (lp_norm(self.h, p) ** p + gradient_lp_norm(self.h, p) ** p) ** (1.0 / p)


@dataclass
class CellProblem:
    """Right-hand side on the reference cell grid, for one reference shape."""

    shape: ObstacleShape
    rhs: ScalarField
    tolerance: float = None

    def __post_init__(self):
        if self.tolerance is None:
            self.tolerance = settings.corrector.solver_tolerance


class CellSolver:
    """Factorized staggered saddle-point system on the reference cell."""

    def __init__(self, shape: ObstacleShape, resolution: Optional[int] = None):
        self.shape = shape
        self.grid: Grid = reference_cell_grid(resolution)
        self.mask: RegionMask = reference_cell_mask(shape, self.grid)
        self.delta = self.grid.h
        self._build_indexing()
        self._build_operators()
        self._factorize()
        logger.info(
            f"Reference cell ready: shape={shape.kind.value} n={self.grid.nx} "
            f"cells={self.n_cells} faces={self.n_faces}"
        )

    @property
    def resolution(self) -> int:
        return self.grid.nx

    def _build_indexing(self) -> None:
        fluid = self.mask.values
        n = self.grid.nx
        self.cell_index = np.full((n, n), -1, dtype=int)
        self.cell_index[fluid] = np.arange(int(fluid.sum()))
        self.n_cells = int(fluid.sum())

        # u-face (j, i) separates cells (j, i) and (j, i+1); v-face (j, i) separates (j, i) and (j+1, i).
        u_active = fluid[:, :-1] & fluid[:, 1:]
        v_active = fluid[:-1, :] & fluid[1:, :]
        self.u_index = np.full(u_active.shape, -1, dtype=int)
        self.v_index = np.full(v_active.shape, -1, dtype=int)
        n_u = int(u_active.sum())
        self.u_index[u_active] = np.arange(n_u)
        self.v_index[v_active] = n_u + np.arange(int(v_active.sum()))
        self.n_u = n_u
        self.n_faces = n_u + int(v_active.sum())

    def _build_operators(self) -> None:
        d = self.delta
        rows, cols, vals = [], [], []

        def add_face(face_idx: np.ndarray, lower_cell: np.ndarray, upper_cell: np.ndarray) -> None:
            # outflow of the lower cell, inflow of the upper one
            active = face_idx >= 0
            for cell, sign in ((lower_cell, 1.0), (upper_cell, -1.0)):
                rows.append(cell[active])
                cols.append(face_idx[active])
                vals.append(np.full(int(active.sum()), sign / d))

        ci = self.cell_index
        add_face(self.u_index, ci[:, :-1], ci[:, 1:])
        add_face(self.v_index, ci[:-1, :], ci[1:, :])
        self.D = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_cells, self.n_faces),
        )

        lap_rows, lap_cols, lap_vals = [], [], []
        for index in (self.u_index, self.v_index):
            active = index >= 0
            idx = index[active]
            lap_rows.append(idx)
            lap_cols.append(idx)
            lap_vals.append(np.full(idx.size, 4.0 / d**2))
            padded = np.pad(index, 1, constant_values=-1)
            for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                neighbour = padded[1 + dj: 1 + dj + index.shape[0], 1 + di: 1 + di + index.shape[1]][active]
                keep = neighbour >= 0
                lap_rows.append(idx[keep])
                lap_cols.append(neighbour[keep])
                lap_vals.append(np.full(int(keep.sum()), -1.0 / d**2))
        self.L = sparse.csr_matrix(
            (np.concatenate(lap_vals), (np.concatenate(lap_rows), np.concatenate(lap_cols))),
            shape=(self.n_faces, self.n_faces),
        )

    def _factorize(self) -> None:
        reduced = self.D[1:]
        saddle = sparse.bmat([[self.L, reduced.T], [reduced, None]], format="csc")
        self._lu = splinalg.splu(saddle)

    def divergence(self, faces: np.ndarray) -> np.ndarray:
        return self.D @ faces

    def energy(self, faces: np.ndarray) -> float:
        """Discrete Dirichlet energy |grad h|^2 of face values."""
        return float(self.delta**2 * faces @ (self.L @ faces))

    def face_points(self) -> np.ndarray:
        """Coordinates of the active faces in unknown order, (n_faces, 2)."""
        x, y = self.grid.x, self.grid.y
        d = self.delta
        points = np.zeros((self.n_faces, 2))
        J, I = np.nonzero(self.u_index >= 0)
        points[self.u_index[J, I]] = np.column_stack([x[I] + 0.5 * d, y[J]])
        J, I = np.nonzero(self.v_index >= 0)
        points[self.v_index[J, I]] = np.column_stack([x[I], y[J] + 0.5 * d])
        return points

    def faces_to_centres(self, faces: np.ndarray) -> VectorField:
        """Average face values to cell centres; non-fluid cells get zero."""
        n = self.grid.nx
        u_faces = np.zeros((n, n - 1))
        v_faces = np.zeros((n - 1, n))
        u_faces[self.u_index >= 0] = faces[self.u_index[self.u_index >= 0]]
        v_faces[self.v_index >= 0] = faces[self.v_index[self.v_index >= 0]]
        hx = 0.5 * (np.pad(u_faces, ((0, 0), (1, 0))) + np.pad(u_faces, ((0, 0), (0, 1))))
        hy = 0.5 * (np.pad(v_faces, ((1, 0), (0, 0))) + np.pad(v_faces, ((0, 1), (0, 0))))
        fluid = self.mask.values
        return VectorField.from_components(self.grid, np.where(fluid, hx, 0.0), np.where(fluid, hy, 0.0))

    def cell_values(self, rhs: np.ndarray) -> np.ndarray:
        """Restrict a grid-shaped array to the fluid cells in unknown order."""
        return np.asarray(rhs, dtype=float)[self.mask.values]

    def check_mean(self, f: np.ndarray, tolerance: Optional[float] = None) -> None:
        tolerance = settings.corrector.mean_tolerance if tolerance is None else tolerance
        total = float(np.sum(f))
        scale = float(np.sum(np.abs(f)))
        if scale > 0 and abs(total) > tolerance * scale:
            raise NonZeroMeanError(
                total * self.delta**2, scale * self.delta**2, "Cell divergence problem (the integral of f over U must vanish)"
            )

    def solve(self, rhs: Sequence[np.ndarray], tolerance: Optional[float] = None) -> List[CellSolution]:
        """
        Solve a batch of right-hand sides given as grid-shaped arrays.
        Values outside the fluid cells are ignored.
        """
        tolerance = settings.corrector.solver_tolerance if tolerance is None else tolerance
        cells = [self.cell_values(r) for r in rhs]
        for f in cells:
            self.check_mean(f)
        if not cells:
            return []
        F = np.column_stack([f - f.mean() for f in cells])
        system_rhs = np.vstack([np.zeros((self.n_faces, F.shape[1])), F[1:]])
        unknowns = self._lu.solve(system_rhs)
        faces = unknowns[: self.n_faces]
        solutions = []
        for k in range(F.shape[1]):
            f_norm = float(np.linalg.norm(F[:, k]))
            residual = float(np.linalg.norm(self.D @ faces[:, k] - F[:, k]))
            relative = residual / f_norm if f_norm > 0 else residual
            if relative > tolerance:
                raise SolverError("Cell divergence solve missed its tolerance", relative)
            solutions.append(CellSolution(faces=faces[:, k].copy(), h=self.faces_to_centres(faces[:, k]), residual=relative))
        CELL_SOLVE_COUNTER.add(len(solutions), {"shape": self.shape.kind.value})
        return solutions

    def solve_many(self, rhs: Sequence[np.ndarray], tolerance: Optional[float] = None) -> List[CellSolution]:
        """Batched solve; batches run on a thread pool sharing the factorization."""
        size = settings.corrector.batch_size
        batches = [list(rhs[i:i + size]) for i in range(0, len(rhs), size)]
        workers = settings.corrector.cell_workers
        if workers > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda batch: self.solve(batch, tolerance), batches))
        else:
            results = [self.solve(batch, tolerance) for batch in batches]
        return [solution for batch in results for solution in batch]


@lru_cache(maxsize=8)
def get_cell_solver(shape: ObstacleShape, resolution: Optional[int] = None) -> CellSolver:
    return CellSolver(shape, resolution or settings.corrector.cell_resolution)


def solve_cell_divergence(problem: CellProblem, resolution: Optional[int] = None) -> VectorField:
    """Minimal-energy h with div h = f on U and h = 0 on its boundary."""
    solver = get_cell_solver(problem.shape, resolution or problem.rhs.grid.nx)
    if problem.rhs.grid != solver.grid:
        raise ValueError("Right-hand side must live on the reference cell grid")
    (solution,) = solver.solve([problem.rhs.values], tolerance=problem.tolerance)
    return solution.h
