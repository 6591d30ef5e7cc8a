"""
Tests for the reference cell problem, corrector assembly and cell constants.
"""

import logging

import numpy as np
import pytest
from scipy import ndimage

from config.settings import settings
from src.corrector.assembly import (
    assemble_h_epsilon,
    build_corrector,
    corrector_bounds,
    corrector_time_derivative,
    euler_corrector,
    project_cell_mean,
)
from src.corrector.cell import CellProblem, get_cell_solver, solve_cell_divergence
from src.corrector.norms import (
    ScaledSobolevNorm,
    estimate_constants,
    scaled_cell_grid,
    scaled_poincare_ratio,
)
from src.errors import CellSolveError, NonZeroMeanError
from src.fields.calculus import div, grad, lp_norm
from src.fields.grid import Grid, ScalarField, VectorField
from src.geometry.lattice import Geometry, LatticeConfig, ObstacleShape, ShapeKind, lattice_centers
from src.geometry.masks import label_nodes, lattice_grid, reference_cell_grid

RESOLUTION = 64


def _mean_zero_rhs(solver, seed=0):
    rng = np.random.default_rng(seed)
    fluid = solver.mask.values
    f = np.where(fluid, rng.standard_normal(solver.grid.shape), 0.0)
    return np.where(fluid, f - f[fluid].mean(), 0.0)


def _smooth_rhs(solver, rng, sigma=3.0):
    fluid = solver.mask.values
    f = np.where(fluid, ndimage.gaussian_filter(rng.standard_normal(solver.grid.shape), sigma=sigma, mode="constant"), 0.0)
    return np.where(fluid, f - f[fluid].mean(), 0.0)


def _aligned_cell(epsilon, resolution):
    """One obstacle on a grid whose nodes are the stretched reference cell centres, in uniform flow."""
    geometry = lattice_centers(LatticeConfig(epsilon=epsilon, d_epsilon=epsilon))
    (center,) = geometry.centers
    reference = reference_cell_grid(resolution)
    grid = Grid(
        origin=(center[0] + epsilon * reference.origin[0], center[1] + epsilon * reference.origin[1]),
        h=epsilon * reference.h,
        nx=resolution,
        ny=resolution,
    )
    u_e = VectorField.from_components(grid, np.ones(grid.shape), np.zeros(grid.shape))
    return geometry, grid, u_e, build_corrector(geometry, u_e, resolution=resolution)


class TestCellSolver:
    """Divergence problem on the reference cell"""

    def setup_method(self):
        """Setup test fixtures"""
        self.solver = get_cell_solver(ObstacleShape(), RESOLUTION)

    def test_divergence_matches_rhs(self):
        """Test div h = f on the fluid cells"""
        f = _mean_zero_rhs(self.solver)
        (solution,) = self.solver.solve([f])
        np.testing.assert_allclose(self.solver.divergence(solution.faces), self.solver.cell_values(f), atol=1e-8)
        assert solution.residual < 1e-8

    def test_field_vanishes_off_fluid(self):
        """Test that the centred field is zero on the obstacle and the border"""
        (solution,) = self.solver.solve([_mean_zero_rhs(self.solver, seed=1)])
        fluid = self.solver.mask.values
        assert np.all(solution.h.values[:, ~fluid] == 0.0)
        assert solution.sobolev_norm(2.0) > 0

    def test_nonzero_mean_rejected(self):
        """Test the solvability condition"""
        ones = np.where(self.solver.mask.values, 1.0, 0.0)
        with pytest.raises(NonZeroMeanError):
            self.solver.solve([ones])

    def test_batched_solve_matches_single(self):
        """Test that batches reuse the factorization consistently"""
        rhs = [_mean_zero_rhs(self.solver, seed=s) for s in range(3)]
        batched = self.solver.solve_many(rhs)
        single = self.solver.solve([rhs[2]])[0]
        np.testing.assert_allclose(batched[2].faces, single.faces, atol=1e-12)

    def test_problem_on_wrong_grid(self):
        """Test that the right-hand side must live on the cell grid"""
        grid = reference_cell_grid(RESOLUTION)
        shifted = scaled_cell_grid(grid, 0.5)
        problem = CellProblem(shape=ObstacleShape(), rhs=ScalarField.zeros(shifted))
        with pytest.raises(ValueError):
            solve_cell_divergence(problem, RESOLUTION)

    def test_square_cell(self):
        """Test the smoothed-square reference cell"""
        solver = get_cell_solver(ObstacleShape(kind=ShapeKind.SMOOTHED_SQUARE), 32)
        (solution,) = solver.solve([_mean_zero_rhs(solver)])
        assert solution.residual < 1e-8

    def test_random_batch(self):
        """Test fifty smooth mean-zero right-hand sides solved in one batch"""
        rng = np.random.default_rng(11)
        rhs = [_smooth_rhs(self.solver, rng) for _ in range(50)]
        solutions = self.solver.solve_many(rhs)
        fluid = self.solver.mask.values
        interior_faces = int((fluid[:, :-1] & fluid[:, 1:]).sum() + (fluid[:-1, :] & fluid[1:, :]).sum())
        assert self.solver.n_faces == interior_faces
        for f, solution in zip(rhs, solutions):
            assert solution.residual <= 1e-8
            target = self.solver.cell_values(f)
            np.testing.assert_allclose(self.solver.divergence(solution.faces), target, atol=1e-8 * np.linalg.norm(target))
            assert np.all(solution.h.values[:, ~fluid] == 0.0)

    def test_w14_constant_is_stable(self):
        """Test that |h|_{W^{1,4}} / |f|_4 stays within a factor two across random data"""
        rng = np.random.default_rng(12)
        rhs = [_smooth_rhs(self.solver, rng) for _ in range(50)]
        ratios = [
            solution.sobolev_norm(4.0) / lp_norm(ScalarField(self.solver.grid, f), 4.0)
            for f, solution in zip(rhs, self.solver.solve_many(rhs))
        ]
        assert max(ratios) < 2.0 * min(ratios)

    def test_zero_rhs_gives_zero_field(self):
        """Test f = 0 gives h = 0"""
        (solution,) = self.solver.solve([np.zeros(self.solver.grid.shape)])
        assert np.all(solution.faces == 0.0)
        assert solution.sobolev_norm(2.0) == 0.0

    def test_solution_has_least_energy(self):
        """Test |grad h| <= |grad g| for any face field g with div g = f"""
        rng = np.random.default_rng(13)
        for _ in range(5):
            g = rng.standard_normal(self.solver.n_faces)
            f = np.zeros(self.solver.grid.shape)
            f[self.solver.mask.values] = self.solver.divergence(g)
            (solution,) = self.solver.solve([f])
            assert self.solver.energy(solution.faces) <= self.solver.energy(g) * (1.0 + 1e-10)


class TestAssembly:
    """h^eps and u^eps on a lattice"""

    def setup_method(self):
        """Setup test fixtures"""
        self.geometry = lattice_centers(LatticeConfig(epsilon=0.1, d_epsilon=0.1))
        self.grid = lattice_grid(self.geometry, margin=0.1)
        self.u_e = VectorField.from_components(self.grid, np.ones(self.grid.shape), np.zeros(self.grid.shape))
        self.corrector = build_corrector(self.geometry, self.u_e, resolution=RESOLUTION)

    def test_vanishes_on_obstacles(self):
        """Test u^eps = 0 on solid nodes"""
        solid, _, _ = label_nodes(self.geometry, self.grid)
        assert np.all(self.corrector.u_eps.values[:, solid] == 0.0)

    def test_equals_euler_outside_cells(self):
        """Test u^eps = u^E away from the inflated cells"""
        _, _, labels = label_nodes(self.geometry, self.grid)
        outside = labels < 0
        np.testing.assert_array_equal(self.corrector.u_eps.values[:, outside], self.u_e.values[:, outside])
        assert np.all(self.corrector.h_eps.values[:, outside] == 0.0)

    def test_reduces_divergence(self):
        """Test that the corrector removes most of div(phi u^E) on the cutoff ramp"""
        ramp = self.corrector.grad_phi.magnitude() > 0
        uncorrected = lp_norm(div(self.u_e * self.corrector.phi), 2.0, ramp)
        corrected = lp_norm(div(self.corrector.u_eps), 2.0, ramp)
        assert corrected < 0.5 * uncorrected
        assert np.isfinite(self.corrector.divergence_residual())

    def test_one_cell_per_obstacle(self):
        """Test the bookkeeping"""
        assert len(self.corrector.cells) == self.geometry.count
        assert set(self.corrector.mean_defects) == set(self.geometry.indices)
        assert max(self.corrector.mean_defects.values()) < 5e-2

    def test_bound_ratios(self):
        """Test that the bound ratios are finite"""
        bounds = corrector_bounds(self.geometry, self.corrector, self.u_e)
        ratios = bounds.ratios()
        assert set(ratios) == {"h_l4", "grad_h_l2", "u_gap_l4"}
        assert all(np.isfinite(v) and v > 0 for v in ratios.values())

    def test_scaled_norm_from_cells(self):
        """Test the change-of-variables norm"""
        norm = ScaledSobolevNorm(epsilon=self.geometry.epsilon, p=2.0)
        assert norm.from_cells(self.corrector.cells) > 0

    def test_supplied_cutoff_gradient(self):
        """Test that a supplied cutoff drives the cells through its own gradient"""
        phi = ScalarField(self.grid, np.ones(self.grid.shape))
        corrector = build_corrector(self.geometry, self.u_e, phi_eps=phi, resolution=RESOLUTION)
        assert np.all(corrector.grad_phi.values == 0.0)
        assert np.all(corrector.h_eps.values == 0.0)
        np.testing.assert_array_equal(corrector.u_eps.values, self.u_e.values)

    def test_discrete_cutoff_gradient(self):
        """Test a sampled cutoff paired with its discrete gradient"""
        phi = self.corrector.phi
        corrector = build_corrector(self.geometry, self.u_e, phi_eps=phi, resolution=RESOLUTION)
        np.testing.assert_array_equal(corrector.grad_phi.values, grad(phi).values)
        ramp = self.corrector.grad_phi.magnitude() > 0
        uncorrected = lp_norm(div(self.u_e * phi), 2.0, ramp)
        assert lp_norm(div(corrector.u_eps), 2.0, ramp) < 0.5 * uncorrected

    def test_explicit_cutoff_gradient(self):
        """Test that an explicit grad_phi is used as given"""
        zeros = VectorField.zeros(self.grid)
        corrector = build_corrector(self.geometry, self.u_e, self.corrector.phi, RESOLUTION, grad_phi=zeros)
        assert corrector.grad_phi is zeros
        assert np.all(corrector.h_eps.values == 0.0)
        assert np.all(assemble_h_epsilon(self.geometry, self.u_e, self.corrector.phi, zeros).values == 0.0)

    def test_gradient_without_cutoff_rejected(self):
        """Test that grad_phi alone is refused"""
        with pytest.raises(ValueError):
            build_corrector(self.geometry, self.u_e, grad_phi=VectorField.zeros(self.grid))


class TestAlignedCell:
    """One obstacle on a grid made of the stretched reference cell"""

    @pytest.mark.parametrize("epsilon", [0.25, 0.2])
    @pytest.mark.parametrize("p", [2.0, 4.0])
    def test_scaled_norm_matches_cells(self, epsilon, p):
        """Test the eps-weighted norm of h^eps against the sum over cell solutions"""
        _, _, _, corrector = _aligned_cell(epsilon, RESOLUTION)
        norm = ScaledSobolevNorm(epsilon=epsilon, p=p)
        assert norm(corrector.h_eps) > 0
        assert norm(corrector.h_eps) == pytest.approx(norm.from_cells(corrector.cells), rel=1e-8)

    def test_divergence_residual_converges(self):
        """Test that halving the cell spacing cuts div u^eps on the ramp at second order"""
        residuals, uncorrected = [], []
        for resolution in (64, 128):
            geometry, grid, u_e, corrector = _aligned_cell(0.25, resolution)
            (center,) = geometry.centers
            X, Y = grid.mesh()
            xi, eta = (X - center[0]) / 0.25, (Y - center[1]) / 0.25
            s = np.maximum(np.abs(xi), np.abs(eta))
            # away from the diagonal kinks of the cutoff
            ramp = (s > 1.5) & (s < 1.8) & (np.abs(np.abs(xi) - np.abs(eta)) > 0.25)
            residuals.append(lp_norm(div(corrector.u_eps), 2.0, ramp))
            uncorrected.append(lp_norm(div(u_e * corrector.phi), 2.0, ramp))
        assert residuals[0] < 0.5 * uncorrected[0]
        assert residuals[1] < 0.4 * residuals[0]


@pytest.mark.parametrize("mu", [0.0, 1.0])
def test_bound_ratios_are_scale_free(mu):
    """Test that every corrector bound ratio varies by less than 3x over an eps sweep"""
    ratios = []
    for epsilon in (0.1, 0.05, 0.025):
        geometry = lattice_centers(LatticeConfig(epsilon=epsilon, d_epsilon=epsilon, mu=mu))
        grid = lattice_grid(geometry)
        X, Y = grid.mesh()
        u_e = VectorField.from_components(grid, 1.0 + 0.25 * np.sin(np.pi * Y), 0.25 * np.cos(np.pi * X))
        corrector = build_corrector(geometry, u_e, resolution=RESOLUTION)
        ratios.append(corrector_bounds(geometry, corrector, u_e).ratios())
    for name in ratios[0]:
        values = [r[name] for r in ratios]
        assert max(values) < 3.0 * min(values), name


class TestMeanProjection:
    """Projection of the cell mean defect"""

    def setup_method(self):
        """Setup test fixtures"""
        self.solver = get_cell_solver(ObstacleShape(), RESOLUTION)
        self.fluid = self.solver.mask.values

    def test_mean_zero_rhs_is_quiet(self, caplog):
        """Test that a mean-zero right-hand side passes without a warning"""
        caplog.set_level(logging.WARNING, logger="src.corrector.assembly")
        _, defect = project_cell_mean(self.solver, _mean_zero_rhs(self.solver), (1, 1))
        assert defect < settings.corrector.mean_defect_warning
        assert not caplog.records

    def test_large_defect_is_logged(self, caplog):
        """Test that a percent-level defect is projected away with a warning"""
        caplog.set_level(logging.WARNING, logger="src.corrector.assembly")
        f = _mean_zero_rhs(self.solver)
        shift = 0.01 * np.abs(f[self.fluid]).sum() / self.fluid.sum()
        projected, defect = project_cell_mean(self.solver, np.where(self.fluid, f + shift, 0.0), (2, 3))
        assert settings.corrector.mean_defect_warning < defect < settings.corrector.assembly_mean_tolerance
        assert abs(projected[self.fluid].sum()) < 1e-10 * np.abs(projected).sum()
        assert np.all(projected[~self.fluid] == 0.0)
        warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
        assert len(warnings) == 1 and "(2, 3)" in warnings[0].getMessage()

    def test_rejects_defect_above_tolerance(self):
        """Test that a right-hand side of one sign is refused"""
        ones = np.where(self.fluid, 1.0, 0.0)
        with pytest.raises(CellSolveError):
            project_cell_mean(self.solver, ones, (1, 1))


def test_time_derivative_needs_positive_spacing():
    """Test the snapshot spacing check"""
    geometry = lattice_centers(LatticeConfig(epsilon=0.25, d_epsilon=0.25))
    zeros = VectorField.zeros(lattice_grid(geometry))
    with pytest.raises(ValueError):
        corrector_time_derivative(zeros, zeros, 0.0)


def test_corrector_without_obstacles():
    """Test that an empty lattice leaves u^E untouched"""
    geometry = lattice_centers(LatticeConfig(epsilon=0.25, d_epsilon=0.25))
    grid = lattice_grid(geometry)
    empty = Geometry.empty(geometry.config)
    X, Y = grid.mesh()
    u_e = VectorField.from_components(grid, -Y, X)
    corrector = build_corrector(empty, u_e)
    np.testing.assert_array_equal(corrector.u_eps.values, u_e.values)
    assert not corrector.cells
    np.testing.assert_array_equal(euler_corrector(empty, u_e).values, u_e.values)
    assert np.all(assemble_h_epsilon(empty, u_e).values == 0.0)


class TestConstants:
    """Empirical cell constants"""

    def test_estimates_are_positive(self):
        """Test a small ensemble"""
        report = estimate_constants(ObstacleShape(), p=2.0, ensemble_size=20, seed=3, resolution=32)
        assert report.C_tilde > 0 and report.K1 > 0 and report.K2 > 0
        assert report.K1_sharp > 0
        assert set(report.to_row()) == {"shape", "p", "C_tilde", "K1", "K2", "ensemble_size"}

    def test_small_ensemble_rejected(self):
        """Test the ensemble floor"""
        with pytest.raises(ValueError):
            estimate_constants(ObstacleShape(), ensemble_size=5, resolution=32)

    def test_poincare_ratio_is_scale_free(self):
        """Test that stretching the cell by eps leaves the ratio unchanged"""
        reference = reference_cell_grid(32)
        X, Y = reference.mesh()
        values = (4.0 - X**2) * (4.0 - Y**2) * np.sin(X)
        unit = scaled_poincare_ratio(ScalarField(scaled_cell_grid(reference, 1.0), values), 1.0)
        small = scaled_poincare_ratio(ScalarField(scaled_cell_grid(reference, 0.1), values), 0.1)
        assert small == pytest.approx(unit, rel=1e-10)
