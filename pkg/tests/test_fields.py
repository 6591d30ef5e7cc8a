"""
Tests for grids, fields, discrete calculus and the Poisson solvers.
"""

import numpy as np
import pytest

from src.errors import EmptyMaskError, NonZeroMeanError, SupportError
from src.fields.calculus import (
    curl,
    div,
    grad,
    gradient_lp_norm,
    integrate,
    interpolate,
    laplacian,
    lp_norm,
    perp_grad,
)
from src.fields.grid import BoundaryKind, Grid, ScalarField, VectorField
from src.fields.poisson import poisson_freespace, poisson_periodic


@pytest.fixture
def open_grid():
    return Grid(origin=(0.0, 0.0), h=0.1, nx=11, ny=11)


@pytest.fixture
def periodic_grid():
    return Grid.periodic_box((0.0, 0.0), 2.0 * np.pi, 32)


class TestGrid:
    """Grid construction and geometry"""

    def test_rejects_nonpositive_spacing(self):
        """Test that h <= 0 is rejected"""
        with pytest.raises(ValueError):
            Grid(origin=(0.0, 0.0), h=0.0, nx=16, ny=16)

    def test_rejects_too_few_nodes(self):
        """Test the minimum node count per axis"""
        with pytest.raises(ValueError):
            Grid(origin=(0.0, 0.0), h=0.1, nx=4, ny=16)

    def test_periodic_box_is_centred(self):
        """Test that a periodic box is centred on the requested point"""
        grid = Grid.periodic_box((1.0, -1.0), 4.0, 16)
        assert grid.periodic
        assert grid.h == pytest.approx(0.25)
        assert grid.center == pytest.approx((1.0, -1.0))

    def test_window_selects_closed_box(self, open_grid):
        """Test node windows over a closed box"""
        rows, cols = open_grid.window((0.25, 0.25), (0.55, 0.55))
        assert (cols.start, cols.stop) == (3, 6)
        assert (rows.start, rows.stop) == (3, 6)

    def test_covering_spans_box(self):
        """Test that a covering grid reaches the upper corner"""
        grid = Grid.covering((0.0, 0.0), (1.0, 0.5), 0.05)
        assert grid.upper[0] >= 1.0 - 1e-12
        assert grid.upper[1] >= 0.5 - 1e-12
        assert grid.boundary is BoundaryKind.OPEN


class TestFields:
    """Scalar and vector field containers"""

    def test_rejects_non_finite(self, open_grid):
        """Test that NaN samples are rejected"""
        values = np.zeros(open_grid.shape)
        values[2, 3] = np.nan
        with pytest.raises(ValueError):
            ScalarField(open_grid, values)

    def test_rejects_wrong_shape(self, open_grid):
        """Test the shape check"""
        with pytest.raises(ValueError):
            VectorField(open_grid, np.zeros(open_grid.shape))

    def test_arithmetic_and_dot(self, open_grid):
        """Test pointwise arithmetic"""
        u = VectorField.from_components(open_grid, np.ones(open_grid.shape), 2.0 * np.ones(open_grid.shape))
        w = u * 2.0 - u
        np.testing.assert_allclose(w.values, u.values)
        np.testing.assert_allclose(u.dot(u).values, 5.0)
        scaled = u * ScalarField(open_grid, np.full(open_grid.shape, 3.0))
        np.testing.assert_allclose(scaled.x, 3.0)

    def test_mixing_grids_fails(self, open_grid, periodic_grid):
        """Test that fields on different grids cannot be combined"""
        with pytest.raises(ValueError):
            ScalarField.zeros(open_grid) + ScalarField.zeros(periodic_grid)


def test_gradient_of_linear_function_is_exact(open_grid):
    """Test grad on an open grid, edges included"""
    X, Y = open_grid.mesh()
    g = grad(ScalarField(open_grid, 2.0 * X - 3.0 * Y))
    np.testing.assert_allclose(g.x, 2.0, atol=1e-10)
    np.testing.assert_allclose(g.y, -3.0, atol=1e-10)


def test_laplacian_of_quadratic_is_exact(open_grid):
    """Test the five-point Laplacian with one-sided edges"""
    X, Y = open_grid.mesh()
    lap = laplacian(ScalarField(open_grid, X**2 + Y**2))
    np.testing.assert_allclose(lap.values, 4.0, atol=1e-8)


def test_perp_gradient_is_divergence_free(periodic_grid):
    """Test div(perp_grad f) = 0 on a periodic grid"""
    X, Y = periodic_grid.mesh()
    u = perp_grad(ScalarField(periodic_grid, np.sin(X) * np.cos(2.0 * Y)))
    assert np.max(np.abs(div(u).values)) < 1e-12


def test_curl_of_rotation(open_grid):
    """Test curl of a solid-body rotation"""
    X, Y = open_grid.mesh()
    u = VectorField.from_components(open_grid, -Y, X)
    np.testing.assert_allclose(curl(u).values, 2.0, atol=1e-10)


class TestNorms:
    """Masked Lp norms and integrals"""

    def test_lp_norm_of_ones(self):
        """Test the L2 norm of the constant one"""
        grid = Grid(origin=(0.0, 0.0), h=0.1, nx=10, ny=10)
        ones = ScalarField(grid, np.ones(grid.shape))
        assert lp_norm(ones, 2.0) == pytest.approx(1.0)
        assert lp_norm(ones, np.inf) == 1.0

    def test_masked_norm_and_integral(self, open_grid):
        """Test that masks restrict the sum"""
        mask = np.zeros(open_grid.shape, dtype=bool)
        mask[:5] = True
        ones = ScalarField(open_grid, np.ones(open_grid.shape))
        assert integrate(ones.values, open_grid, mask) == pytest.approx(mask.sum() * open_grid.cell_area)
        assert lp_norm(ones, 1.0, mask) == pytest.approx(mask.sum() * open_grid.cell_area)

    def test_empty_mask_raises(self, open_grid):
        """Test that an empty mask is an error"""
        with pytest.raises(EmptyMaskError):
            lp_norm(ScalarField.zeros(open_grid), 2.0, np.zeros(open_grid.shape, dtype=bool))

    def test_p_below_one_raises(self, open_grid):
        """Test that p < 1 is rejected"""
        with pytest.raises(ValueError):
            gradient_lp_norm(ScalarField.zeros(open_grid), 0.5)


class TestPoisson:
    """Periodic and free-space Poisson solvers"""

    def test_periodic_inverts_five_point_laplacian(self, periodic_grid):
        """Test that poisson_periodic undoes laplacian"""
        X, Y = periodic_grid.mesh()
        f = ScalarField(periodic_grid, np.sin(X) * np.cos(Y) + 0.3 * np.cos(3.0 * X))
        phi = poisson_periodic(laplacian(f))
        np.testing.assert_allclose(phi.values, f.values, atol=1e-10)

    def test_periodic_rejects_nonzero_mean(self, periodic_grid):
        """Test the solvability condition"""
        with pytest.raises(NonZeroMeanError):
            poisson_periodic(ScalarField(periodic_grid, np.ones(periodic_grid.shape)))

    def test_periodic_needs_periodic_grid(self, open_grid):
        """Test that open grids are refused"""
        with pytest.raises(ValueError):
            poisson_periodic(ScalarField.zeros(open_grid))

    def test_freespace_rejects_outer_support(self, open_grid):
        """Test the inner-half support check"""
        with pytest.raises(SupportError):
            poisson_freespace(ScalarField(open_grid, np.ones(open_grid.shape)))

    def test_freespace_far_field_is_logarithmic(self):
        """Test that a compact source looks like a point charge from afar"""
        grid = Grid.covering((-1.0, -1.0), (1.0, 1.0), 2.0 / 63)
        X, Y = grid.mesh()
        rhs = np.where(np.hypot(X, Y) < 0.2, 1.0, 0.0)
        phi = poisson_freespace(ScalarField(grid, rhs))
        charge = rhs.sum() * grid.cell_area
        r = np.hypot(X[-1, -1], Y[-1, -1])
        assert phi.values[-1, -1] == pytest.approx(charge * np.log(r) / (2.0 * np.pi), rel=1e-3)


class TestInterpolation:
    """Spline interpolation"""

    def test_reproduces_node_values(self, open_grid):
        """Test that the interpolant passes through the samples"""
        X, Y = open_grid.mesh()
        f = ScalarField(open_grid, np.sin(X) + Y**2)
        points = np.stack([X[3:6, 3:6], Y[3:6, 3:6]], axis=-1)
        np.testing.assert_allclose(interpolate(f, points), f.values[3:6, 3:6], atol=1e-10)

    def test_zero_outside_open_grid(self, open_grid):
        """Test the zero extension"""
        f = ScalarField(open_grid, np.ones(open_grid.shape))
        assert interpolate(f, np.array([[5.0, 5.0]]), order=1)[0] == 0.0

    def test_wraps_on_periodic_grid(self, periodic_grid):
        """Test periodic wrapping"""
        X, Y = periodic_grid.mesh()
        f = ScalarField(periodic_grid, np.sin(X))
        point = np.array([[0.3, 0.1]])
        shifted = point + np.array([[2.0 * np.pi, 0.0]])
        assert interpolate(f, point)[0] == pytest.approx(interpolate(f, shifted)[0], abs=1e-10)
