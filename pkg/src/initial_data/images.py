"""
Corrected initial velocity for disk obstacles by the method of images.

For the unit disk the exterior map is the identity, so around obstacle k the
map is T(x) = (x - z_k) / eps and the conjugate point is y* = y / |y|^2. The
stream function

    psi^eps = psi_0 + sum_k phi_k I_k,
    I_k(x)  = (1/2pi) int ln(|T(x)| / |T(x) - T(y)*|) omega_0(y) dy,

is constant on every circle and carries no circulation around it. Then
u_0 - v^eps = w2 + w4 with w2 = -sum grad_perp(phi_k) I_k and
w4 = -sum phi_k grad_perp(I_k); the other two terms of the general
decomposition vanish identically for disks.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import ndimage
from scipy.spatial import cKDTree

from config.settings import settings
from src.biot_savart.blobs import VorticityBlob, VorticityInput, blob_source_grid, sample_blobs, vorticity_on
from src.biot_savart.kernel import biot_savart_fft, point_vortex_stream, point_vortex_velocity, vortex_sources
from src.cutoff.profiles import CutoffProfile, obstacle_cutoff
from src.errors import SupportError, UnsupportedShapeError
from src.fields.calculus import lp_norm, perp_grad
from src.fields.grid import Grid, ScalarField, VectorField
from src.fields.poisson import poisson_freespace
from src.geometry.lattice import Geometry
from src.geometry.masks import label_nodes

logger = logging.getLogger(__name__)


def _perp(v: np.ndarray) -> np.ndarray:
    return np.column_stack([-v[:, 1], v[:, 0]])


@dataclass(frozen=True)
class ConformalMapDisk:
    """Exterior map of the unit disk, placed at one obstacle: T(x) = (x - z) / eps."""

    center: tuple
    epsilon: float
    beta: float = 1.0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - np.asarray(self.center)) / self.epsilon

    @staticmethod
    def conjugate(points: np.ndarray) -> np.ndarray:
        """Reflection y / |y|^2 across the unit circle."""
        points = np.asarray(points, dtype=float)
        return points / np.sum(points**2, axis=-1, keepdims=True)


def check_fluid_support(geometry: Geometry, sources: np.ndarray) -> None:
    """SupportError when any vorticity node lies in a closed obstacle."""
    if geometry.count == 0 or len(sources) == 0:
        return
    tree = cKDTree(geometry.centers_array)
    distance, nearest = tree.query(sources, p=np.inf, distance_upper_bound=geometry.epsilon * (1.0 + 1e-9))
    near = np.isfinite(distance)
    if not near.any():
        return
    local = (sources[near] - geometry.centers_array[nearest[near]]) / geometry.epsilon
    hits = geometry.shape.contains(local)
    if hits.any():
        index = geometry.indices[int(nearest[near][np.argmax(hits)])]
        raise SupportError(
            f"Initial vorticity is supported inside obstacle {index}; it must vanish on every obstacle"
        )


@dataclass
class ImageTerms:
    """Corrections at a set of points: psi^eps - psi_0, w2 and w4."""

    psi: np.ndarray
    w2: np.ndarray
    w4: np.ndarray

    @property
    def velocity_gap(self) -> np.ndarray:
        """u_0 - v^eps."""
        return self.w2 + self.w4


class ImageSystem:
    """Point-vortex quadrature of the initial vorticity and its images in every disk."""

    def __init__(self, geometry: Geometry, sources: np.ndarray, strengths: np.ndarray):
        if geometry.count and not geometry.shape.is_disk:
            raise UnsupportedShapeError(
                f"Image corrections need disk obstacles, got {geometry.shape.kind.value}; use u0_eps_grid"
            )
        self.geometry = geometry
        self.sources = np.asarray(sources, dtype=float).reshape(-1, 2)
        self.strengths = np.asarray(strengths, dtype=float).ravel()
        check_fluid_support(geometry, self.sources)
        self.circulation = float(self.strengths.sum())
        self.profile = CutoffProfile.smoothstep()
        self._tree = cKDTree(geometry.centers_array) if geometry.count else None

    @classmethod
    def from_vorticity(cls, geometry: Geometry, omega: ScalarField) -> "ImageSystem":
        sources, strengths = vortex_sources(omega)
        return cls(geometry, sources, strengths)

    @classmethod
    def from_blobs(
        cls, geometry: Geometry, blobs: Sequence[VorticityBlob], nodes: Optional[int] = None
    ) -> "ImageSystem":
        grid = blob_source_grid(blobs, nodes or settings.initial_data.source_nodes)
        return cls.from_vorticity(geometry, sample_blobs(blobs, grid))

    def map_for(self, k: int) -> ConformalMapDisk:
        return ConformalMapDisk(center=self.geometry.centers[k], epsilon=self.geometry.epsilon)

    def obstacle_terms(self, k: int, points: np.ndarray):
        """I_k and grad_perp I_k at points outside obstacle k."""
        T_map = self.map_for(k)
        T = T_map(points)
        images = ConformalMapDisk.conjugate(T_map(self.sources))
        r2 = np.sum(T**2, axis=-1)
        log_T = 0.5 * np.log(r2)
        I = self.circulation * log_T / (2.0 * np.pi) - point_vortex_stream(images, self.strengths, T)
        center_term = self.circulation / (2.0 * np.pi) * _perp(T) / r2[:, None]
        perp_grad_I = (center_term - point_vortex_velocity(images, self.strengths, T)) / T_map.epsilon
        return I, perp_grad_I

    def evaluate(self, points: np.ndarray) -> ImageTerms:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        terms = ImageTerms(
            psi=np.zeros(len(points)), w2=np.zeros((len(points), 2)), w4=np.zeros((len(points), 2))
        )
        if self._tree is None or len(points) == 0 or len(self.sources) == 0:
            return terms
        eps = self.geometry.epsilon
        distance, nearest = self._tree.query(points, p=np.inf, distance_upper_bound=2.0 * eps)
        near = np.isfinite(distance)
        for k in np.unique(nearest[near]):
            selected = np.flatnonzero(near & (nearest == k))
            local = points[selected]
            offset = (local - np.asarray(self.geometry.centers[k])) / eps
            outside = np.sum(offset**2, axis=1) >= 1.0 - 1e-9
            selected, local = selected[outside], local[outside]
            if selected.size == 0:
                continue
            phi, grad_phi = obstacle_cutoff(local, self.geometry.centers[k], eps, self.profile)
            I, perp_grad_I = self.obstacle_terms(int(k), local)
            terms.psi[selected] += phi * I
            terms.w2[selected] -= _perp(grad_phi) * I[:, None]
            terms.w4[selected] -= phi[:, None] * perp_grad_I
        return terms

    def free_velocity(self, points: np.ndarray, exclude_radius: float = 0.0) -> np.ndarray:
        return point_vortex_velocity(self.sources, self.strengths, points, exclude_radius=exclude_radius)

    def velocity(self, points: np.ndarray) -> np.ndarray:
        """v^eps at points by direct summation."""
        return self.free_velocity(points) - self.evaluate(points).velocity_gap

    def stream(self, points: np.ndarray) -> np.ndarray:
        return point_vortex_stream(self.sources, self.strengths, points) + self.evaluate(points).psi


@dataclass
class StreamCorrection:
    """Grid fields of the corrected initial data."""

    psi_eps: ScalarField
    v_eps: VectorField
    u0: VectorField
    w: Dict[str, VectorField] = field(default_factory=dict)
    solid: Optional[np.ndarray] = None


def stream_correction(geometry: Geometry, omega0: VorticityInput, grid: Grid) -> StreamCorrection:
    omega = vorticity_on(omega0, grid)
    system = ImageSystem.from_vorticity(geometry, omega)
    u0 = biot_savart_fft(omega)
    psi0 = poisson_freespace(omega)
    if geometry.count:
        solid, _, _ = label_nodes(geometry, grid)
    else:
        solid = np.zeros(grid.shape, dtype=bool)

    fluid = ~solid
    X, Y = grid.mesh()
    terms = system.evaluate(np.column_stack([X[fluid], Y[fluid]]))
    psi_corr = np.zeros(grid.shape)
    psi_corr[fluid] = terms.psi
    w2 = np.zeros((2,) + grid.shape)
    w4 = np.zeros((2,) + grid.shape)
    w2[:, fluid] = terms.w2.T
    w4[:, fluid] = terms.w4.T
    v = np.where(fluid[None], u0.values - w2 - w4, 0.0)
    zeros = VectorField.zeros(grid)
    return StreamCorrection(
        psi_eps=ScalarField(grid, psi0.values + psi_corr),
        v_eps=VectorField(grid, v),
        u0=u0,
        w={"w1": zeros, "w2": VectorField(grid, w2), "w3": zeros.copy(), "w4": VectorField(grid, w4)},
        solid=solid,
    )


def corrected_velocity_disk(geometry: Geometry, omega0: VorticityInput, grid: Grid) -> VectorField:
    """v^eps = grad_perp psi^eps on the grid, zero on the obstacles."""
    correction = stream_correction(geometry, omega0, grid)
    logger.info(
        f"Corrected initial data on {geometry.count} disks: "
        f"|u0 - v|_2 = {lp_norm(correction.u0 - correction.v_eps, 2.0, ~correction.solid):.4e}"
    )
    return correction.v_eps


@dataclass
class WDecomposition:
    fields: Dict[str, VectorField]
    norms: Dict[str, float]
    reconstruction_residual: float


def w_decomposition(geometry: Geometry, omega0: VorticityInput, grid: Grid) -> WDecomposition:
    """
    w1..w4 on the grid with their L2 norms over the fluid. The residual compares
    u_0 - grad_perp(psi^eps) (finite differences) with w2 + w4 on nodes whose
    stencil stays in the fluid, relative to |w2 + w4|.
    """
    if geometry.count and not geometry.shape.is_disk:
        raise UnsupportedShapeError("The w decomposition is implemented for disk obstacles only")
    correction = stream_correction(geometry, omega0, grid)
    fluid = ~correction.solid
    norms = {name: lp_norm(w, 2.0, fluid) for name, w in correction.w.items()}

    interior = ndimage.binary_erosion(fluid, border_value=0)
    interior[[0, -1], :] = interior[:, [0, -1]] = False
    psi0 = poisson_freespace(vorticity_on(omega0, grid))
    gap = perp_grad(psi0) - perp_grad(correction.psi_eps)
    total = correction.w["w2"] + correction.w["w4"]
    scale = lp_norm(total, 2.0, interior) if interior.any() else 0.0
    residual = lp_norm(gap - total, 2.0, interior) if interior.any() else 0.0
    return WDecomposition(
        fields=correction.w,
        norms=norms,
        reconstruction_residual=residual / scale if scale > 0 else residual,
    )


def boundary_diagnostics(system: ImageSystem, samples: Optional[int] = None) -> pd.DataFrame:
    """Tangency and circulation residuals of v^eps on every obstacle circle, relative to max |v|."""
    samples = samples or settings.initial_data.boundary_samples
    tolerance = settings.initial_data.quadrature_tolerance
    eps = system.geometry.epsilon
    theta = 2.0 * np.pi * np.arange(samples) / samples
    normal = np.column_stack([np.cos(theta), np.sin(theta)])
    tangent = _perp(normal)
    rows = []
    for k, (center, (i, j)) in enumerate(zip(system.geometry.centers, system.geometry.indices)):
        points = np.asarray(center) + eps * normal
        v = system.velocity(points)
        speed = float(np.max(np.hypot(v[:, 0], v[:, 1]))) or 1.0
        tangency = float(np.max(np.abs(np.sum(v * normal, axis=1)))) / speed
        circulation = abs(float(np.sum(np.sum(v * tangent, axis=1)) * eps * 2.0 * np.pi / samples))
        relative = circulation / (speed * 2.0 * np.pi * eps)
        rows.append({
            "i": i,
            "j": j,
            "tangency": tangency,
            "circulation": relative,
            "passed": tangency <= tolerance and relative <= tolerance,
        })
    frame = pd.DataFrame(rows, columns=["i", "j", "tangency", "circulation", "passed"])
    failed = frame[~frame["passed"]] if len(frame) else frame
    for _, row in failed.iterrows():
        logger.warning(
            f"Obstacle ({row['i']}, {row['j']}): tangency {row['tangency']:.2e}, circulation {row['circulation']:.2e}"
        )
    return frame
