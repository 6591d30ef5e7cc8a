"""
Tests for cutoff profiles and the lattice cutoff.
"""

import math

import numpy as np
import pytest

from src.cutoff.lattice_cutoff import (
    cutoff_at,
    cutoff_bound_shape,
    harmonic_gradient_per_obstacle,
    lattice_cutoff,
    lattice_cutoff_with_gradient,
    verify_cutoff_norms,
)
from src.cutoff.profiles import (
    CutoffProfile,
    base_cutoff,
    harmonic_gradient_norm,
    obstacle_cutoff,
    smoothstep_value_and_gradient,
)
from src.errors import UnsupportedShapeError
from src.geometry.lattice import LatticeConfig, ObstacleShape, ShapeKind, lattice_centers
from src.geometry.masks import RegionKind, lattice_grid, rasterize_all


class TestSmoothstep:
    """The default cutoff profile"""

    @pytest.mark.parametrize(
        "point,expected",
        [((0.0, 0.0), 1.0), ((1.5, 0.0), 1.0), ((1.75, 0.0), 0.5), ((0.0, -2.0), 0.0), ((3.0, 1.0), 0.0)],
    )
    def test_values(self, point, expected):
        """Test plateau, ramp midpoint and support edge"""
        assert base_cutoff(np.array(point)) == pytest.approx(expected)

    def test_gradient_vanishes_off_ramp(self):
        """Test that the gradient lives on the ramp only"""
        _, gradient = smoothstep_value_and_gradient(np.array([[1.0, 0.5], [2.5, 0.0], [1.75, 0.2]]))
        np.testing.assert_array_equal(gradient[0], 0.0)
        np.testing.assert_array_equal(gradient[1], 0.0)
        assert gradient[2, 0] < 0.0 and gradient[2, 1] == 0.0

    def test_gradient_matches_finite_difference(self):
        """Test the analytic gradient on the ramp"""
        point, step = np.array([1.6, 0.3]), 1e-6
        _, gradient = obstacle_cutoff(point, (0.0, 0.0), 1.0)
        value_plus, _ = obstacle_cutoff(point + [step, 0.0], (0.0, 0.0), 1.0)
        value_minus, _ = obstacle_cutoff(point - [step, 0.0], (0.0, 0.0), 1.0)
        assert gradient[0] == pytest.approx((value_plus - value_minus) / (2 * step), rel=1e-5)


class TestHarmonic:
    """The logarithmic cutoff on disks"""

    def test_needs_separated_radii(self):
        """Test that d must exceed eps"""
        with pytest.raises(ValueError):
            CutoffProfile.harmonic(0.1, 0.1)

    def test_boundary_values(self):
        """Test the values at eps and at d"""
        profile = CutoffProfile.harmonic(0.05, 0.2)
        assert base_cutoff(np.array([0.05, 0.0]), profile) == pytest.approx(1.0)
        assert base_cutoff(np.array([0.0, 0.2]), profile) == pytest.approx(0.0)
        assert base_cutoff(np.array([0.1, 0.0]), profile) == pytest.approx(math.log(0.5) / math.log(0.25))

    def test_gradient_norm_matches_closed_form(self):
        """Test the measured per-obstacle gradient norm"""
        geometry = lattice_centers(LatticeConfig(epsilon=0.05, d_epsilon=0.25))
        grid = lattice_grid(geometry, margin=0.25, nodes_per_epsilon=16)
        measured = harmonic_gradient_per_obstacle(geometry, grid)
        assert measured == pytest.approx(harmonic_gradient_norm(0.05, 0.25), rel=0.1)

    def test_rejects_non_disk(self):
        """Test that the harmonic cutoff needs disks"""
        config = LatticeConfig(epsilon=0.1, d_epsilon=0.2, shape=ObstacleShape(kind=ShapeKind.SMOOTHED_SQUARE))
        geometry = lattice_centers(config)
        with pytest.raises(UnsupportedShapeError):
            cutoff_at(geometry, np.zeros((1, 2)), CutoffProfile.harmonic(0.1, 0.2))


class TestLatticeCutoff:
    """phi^eps over the lattice"""

    def setup_method(self):
        """Setup test fixtures"""
        self.geometry = lattice_centers(LatticeConfig(epsilon=0.1, d_epsilon=0.1))
        self.grid = lattice_grid(self.geometry, margin=0.2)

    def test_vanishes_on_obstacles(self):
        """Test phi = 0 on solid nodes and 1 far away"""
        phi = lattice_cutoff(self.geometry, self.grid)
        solid = rasterize_all(self.geometry, self.grid)[RegionKind.SOLID].values
        assert np.all(phi.values[solid] == 0.0)
        assert phi.values[0, 0] == 1.0
        assert phi.values.min() >= -1e-12 and phi.values.max() <= 1.0 + 1e-12

    def test_grid_and_pointwise_agree(self):
        """Test that the gridded and pointwise cutoffs match"""
        phi, grad_phi = lattice_cutoff_with_gradient(self.geometry, self.grid)
        X, Y = self.grid.mesh()
        value, gradient = cutoff_at(self.geometry, np.stack([X, Y], axis=-1))
        np.testing.assert_allclose(phi.values, value, atol=1e-12)
        np.testing.assert_allclose(grad_phi.values, np.moveaxis(gradient, -1, 0), atol=1e-9)

    def test_norm_report(self):
        """Test the cutoff norm report"""
        report = verify_cutoff_norms(self.geometry, self.grid, 2.0)
        assert report.lhs > 0
        assert report.bound_shape == pytest.approx(cutoff_bound_shape(0.1, 0.1, 1.0, 2.0))
        assert report.ratio == pytest.approx(report.lhs / report.bound_shape)

    def test_rejects_p_below_one(self):
        """Test the exponent check"""
        with pytest.raises(ValueError):
            verify_cutoff_norms(self.geometry, self.grid, 0.5)


def test_bound_shape_at_infinity():
    """Test that p = inf has a flat shape"""
    assert cutoff_bound_shape(0.1, 0.2, 1.0, np.inf) == 1.0


@pytest.mark.parametrize("mu", [0.0, 1.0])
@pytest.mark.parametrize("p", [2.0, 4.0])
def test_ratio_is_scale_free_at_critical_spacing(mu, p):
    """Test that the measured ratio stays within a fixed band as eps shrinks with d = eps"""
    ratios = []
    for epsilon in (0.1, 0.05, 0.025):
        geometry = lattice_centers(LatticeConfig(epsilon=epsilon, d_epsilon=epsilon, mu=mu))
        grid = lattice_grid(geometry, margin=epsilon)
        ratios.append(verify_cutoff_norms(geometry, grid, p).ratio)
    assert max(ratios) < 3.0 * min(ratios), ratios


@pytest.mark.parametrize("epsilon,d_epsilon", [(0.1, 0.1), (0.05, 0.15)])
def test_cutoff_defect_lives_in_sleeve(epsilon, d_epsilon):
    """Test that phi < 1 only on the sleeve or the obstacles"""
    geometry = lattice_centers(LatticeConfig(epsilon=epsilon, d_epsilon=d_epsilon))
    grid = lattice_grid(geometry, margin=epsilon)
    phi, _ = lattice_cutoff_with_gradient(geometry, grid)
    masks = rasterize_all(geometry, grid)
    covered = masks[RegionKind.SLEEVE].values | masks[RegionKind.SOLID].values
    assert np.all(covered[phi.values < 1.0 - 1e-12])
    np.testing.assert_allclose(phi.values[~covered], 1.0, atol=1e-12)
