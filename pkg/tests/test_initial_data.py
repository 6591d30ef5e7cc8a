"""
Tests for the corrected initial velocity: images for disks, the exterior grid
solve, and the initial-rate table.
"""

import math

import numpy as np
import pytest
from scipy import ndimage

from src.biot_savart.blobs import VorticityBlob, sample_blobs
from src.errors import SupportError, UnsupportedShapeError
from src.fields.calculus import lp_norm
from src.fields.grid import Grid
from src.geometry.lattice import LatticeConfig, ObstacleShape, ShapeKind, lattice_centers
from src.geometry.masks import label_nodes
from src.initial_data.grid_solve import solve_exterior
from src.initial_data.images import (
    ConformalMapDisk,
    ImageSystem,
    boundary_diagnostics,
    corrected_velocity_disk,
    stream_correction,
    w_decomposition,
)
from src.initial_data.rate import RATE_COLUMNS, initial_bound_shape, measure_initial_rate


@pytest.fixture
def single_disk():
    return lattice_centers(LatticeConfig(epsilon=0.25, d_epsilon=0.25))


@pytest.fixture
def vortices():
    return np.array([[0.9, 0.9], [0.8, 0.3], [-0.2, 0.6]]), np.array([1.0, -0.5, 0.3])


def test_conjugate_reflects_across_unit_circle():
    """Test y* = y / |y|^2"""
    np.testing.assert_allclose(ConformalMapDisk.conjugate(np.array([[2.0, 0.0], [0.0, -0.5]])), [[0.5, 0.0], [0.0, -2.0]])


class TestImageSystem:
    """Image corrections around disks"""

    def test_tangent_with_zero_circulation(self, single_disk, vortices):
        """Test tangency and circulation on the obstacle circle"""
        system = ImageSystem(single_disk, *vortices)
        frame = boundary_diagnostics(system, samples=128)
        assert len(frame) == 1
        assert bool(frame["passed"].all())
        assert frame["tangency"].iloc[0] < 1e-8

    def test_stream_function_constant_on_circle(self, single_disk, vortices):
        """Test that psi^eps is constant on the obstacle boundary"""
        system = ImageSystem(single_disk, *vortices)
        theta = np.linspace(0.0, 2.0 * np.pi, 50, endpoint=False)
        circle = np.array(single_disk.centers[0]) + 0.25 * np.column_stack([np.cos(theta), np.sin(theta)])
        psi = system.stream(circle)
        assert np.ptp(psi) < 1e-10 * max(np.abs(psi).max(), 1.0)

    def test_unchanged_far_from_obstacles(self, single_disk, vortices):
        """Test that corrections vanish outside the inflated cells"""
        system = ImageSystem(single_disk, *vortices)
        terms = system.evaluate(np.array([[2.0, 2.0], [-1.0, 0.0]]))
        np.testing.assert_array_equal(terms.velocity_gap, 0.0)

    def test_source_inside_obstacle(self, single_disk):
        """Test that vorticity on an obstacle is refused"""
        with pytest.raises(SupportError):
            ImageSystem(single_disk, np.array([[0.25, 0.3]]), np.array([1.0]))

    def test_non_disk_rejected(self):
        """Test that images need disks"""
        config = LatticeConfig(epsilon=0.25, d_epsilon=0.25, shape=ObstacleShape(kind=ShapeKind.SMOOTHED_SQUARE))
        with pytest.raises(UnsupportedShapeError):
            ImageSystem(lattice_centers(config), np.array([[0.9, 0.9]]), np.array([1.0]))


class TestGridFields:
    """Corrected initial data on a grid"""

    def setup_method(self):
        """Setup test fixtures"""
        self.geometry = lattice_centers(LatticeConfig(epsilon=0.25, d_epsilon=0.25))
        self.grid = Grid.covering((-1.5, -1.25), (2.0, 1.75), self.geometry.epsilon / 8)
        self.blob = VorticityBlob(center=(-0.3, 0.25), radius=0.03)

    def test_disk_correction_vanishes_on_solid(self):
        """Test v^eps = 0 on the obstacle"""
        correction = stream_correction(self.geometry, self.blob, self.grid)
        assert np.all(correction.v_eps.values[:, correction.solid] == 0.0)
        assert correction.solid.any()
        velocity = corrected_velocity_disk(self.geometry, self.blob, self.grid)
        np.testing.assert_array_equal(velocity.values, correction.v_eps.values)

    def test_w_decomposition_reconstructs_gap(self):
        """Test u_0 - v^eps = w2 + w4 for disks, converging under refinement"""
        decomposition = w_decomposition(self.geometry, self.blob, self.grid)
        assert decomposition.norms["w1"] == 0.0 and decomposition.norms["w3"] == 0.0
        assert decomposition.reconstruction_residual < 0.03
        fine = Grid.covering((-1.5, -1.25), (2.0, 1.75), self.geometry.epsilon / 16)
        refined = w_decomposition(self.geometry, self.blob, fine)
        assert refined.reconstruction_residual < 0.5 * decomposition.reconstruction_residual

    def test_exterior_solution_is_closer_than_free_velocity(self):
        """Test |u_0^eps - v^eps| <= |u_0 - v^eps| over the fluid"""
        correction = stream_correction(self.geometry, self.blob, self.grid)
        exterior = solve_exterior(self.geometry, self.blob, self.grid).velocity
        fluid = ~correction.solid
        far = ndimage.binary_erosion(fluid, iterations=3)
        gap = lp_norm(correction.u0 - correction.v_eps, 2.0, fluid)
        assert gap > 0
        assert lp_norm(exterior - correction.v_eps, 2.0, far) <= gap

    def test_exterior_solve_is_constant_on_ring(self):
        """Test psi constant on the boundary ring and zero net charge"""
        solution = solve_exterior(self.geometry, sample_blobs([self.blob], self.grid), self.grid)
        ring_psi = solution.psi.values[solution.ring]
        assert np.ptp(ring_psi) < 1e-8 * np.abs(solution.psi.values).max()
        assert abs(solution.charges.sum()) < 1e-8 * np.abs(solution.charges).sum()
        solid, _, _ = label_nodes(self.geometry, self.grid)
        assert np.all(solution.velocity.values[:, solid] == 0.0)

    def test_exterior_solve_rejects_vorticity_on_obstacle(self):
        """Test the support requirement"""
        blob = VorticityBlob(center=(0.25, 0.25), radius=0.03)
        with pytest.raises(SupportError):
            solve_exterior(self.geometry, blob, self.grid)


def test_initial_bound_shape():
    """Test eps |ln eps| / d^((1+mu)/2)"""
    assert initial_bound_shape(0.1, 0.1, 1.0) == pytest.approx(math.log(10.0))


def test_initial_rate_table():
    """Test the per-eps rows of the rate table"""
    blobs = [VorticityBlob(center=(-0.6, 0.5), radius=0.05)]
    table = measure_initial_rate(blobs, [0.25, 0.125], mu=1.0)
    assert list(table.columns) == RATE_COLUMNS
    assert len(table) == 2
    assert (table["l2_error"] > 0).all()
    np.testing.assert_allclose(table["ratio"], table["l2_error"] / table["bound_shape"])


def test_initial_rate_decreases_at_critical_spacing():
    """Test that the error shrinks with eps (d = eps, mu = 0) under one constant"""
    blobs = [VorticityBlob(center=(-0.6, 0.5), radius=0.05)]
    table = measure_initial_rate(blobs, [0.08, 0.04, 0.02], mu=0.0)
    errors = table["l2_error"].to_numpy()
    assert np.all(np.diff(errors) < 0), errors
    constant = table["ratio"].max()
    assert (table["l2_error"] <= constant * table["bound_shape"] * (1.0 + 1e-12)).all()
    assert table["ratio"].min() > constant / 3.0
