"""
Tests for the full-plane Euler solver and its diagnostics.
"""

import math

import numpy as np
import pytest

from config.settings import settings
from src.biot_savart.blobs import BlobKind, VorticityBlob, sample_blobs
from src.errors import CFLViolationError
from src.euler.diagnostics import envelope_constant, euler_pressure, pair_angle, yudovich_report
from src.euler.solver import CONSERVED_COLUMNS, EulerSolver, EulerState, euler_step
from src.fields.grid import Grid
from src.study.runner import aligned_dt

T_END = 0.4


@pytest.fixture
def grid():
    return Grid.covering((-1.0, -1.0), (1.0, 1.0), 1.0 / 48)


@pytest.fixture
def state(grid):
    bump = VorticityBlob(kind=BlobKind.BUMP, center=(0.0, 0.0), radius=0.3, amplitude=1.0)
    return EulerState.from_vorticity(bump.sample(grid))


def _aligned_step(state, T, n_snapshots):
    speed = float(np.max(state.velocity.magnitude()))
    return aligned_dt(T, 0.4 * state.omega.grid.h / speed, n_snapshots)


def _step(state):
    return _aligned_step(state, T_END, 4)


def _relative_l2(a, b):
    return float(np.linalg.norm(a.values - b.values) / np.linalg.norm(b.values))


class TestEulerSolver:
    """Semi-Lagrangian Euler runs"""

    def test_series_and_snapshots(self, state):
        """Test the conserved-quantity series and snapshot count"""
        trajectory = EulerSolver().run(state, T_END, _step(state), n_snapshots=4)
        assert list(trajectory.series.columns) == CONSERVED_COLUMNS
        assert len(trajectory.snapshots) == 5
        assert trajectory.final.time == pytest.approx(T_END)
        assert trajectory.velocity_at(0.0) is state.velocity

    def test_circulation_conserved(self, state):
        """Test the circulation drift of a steady vortex"""
        trajectory = EulerSolver().run(state, T_END, _step(state), n_snapshots=4)
        circulation = trajectory.series["circulation"].to_numpy()
        assert np.max(np.abs(circulation - circulation[0])) < 1e-2 * abs(circulation[0])
        assert trajectory.drift()["l1"] < 1e-2

    def test_reverse_run_returns(self, state):
        """Test that integrating back recovers the initial vorticity"""
        dt = _step(state)
        forward = EulerSolver().run(state, T_END, dt, n_snapshots=4)
        back = EulerSolver(reverse=True).run(EulerState.from_vorticity(forward.final.omega), T_END, dt, n_snapshots=4)
        difference = np.max(np.abs(back.final.omega.values - state.omega.values))
        assert difference < 0.05 * np.max(np.abs(state.omega.values))
        assert _relative_l2(back.final.omega, state.omega) < 5e-3

    def test_invalid_step(self, state):
        """Test argument checks"""
        with pytest.raises(ValueError):
            EulerSolver().run(state, T_END, 0.0)
        with pytest.raises(ValueError):
            EulerSolver().run(state, -1.0, 0.01)

    def test_cfl_violation(self, state):
        """Test that a huge step is refused"""
        with pytest.raises(CFLViolationError):
            euler_step(state, 10.0)


class TestDiagnostics:
    """Trajectory diagnostics"""

    def test_envelope_constant_recovers_exponential(self):
        """Test that C exp(C t) samples give back C"""
        times = np.array([0.0, 0.5, 1.0])
        assert envelope_constant(times, 2.0 * np.exp(2.0 * times)) == pytest.approx(2.0)

    def test_yudovich_envelope_bounds_series(self, state):
        """Test that the fitted envelope bounds every sample"""
        trajectory = EulerSolver().run(state, T_END, _step(state), n_snapshots=4)
        report = yudovich_report(trajectory)
        values = report.series["grad_u_inf"].to_numpy()
        assert report.envelope_constant > 0
        assert np.all(report.envelope(report.series["time"].to_numpy()) >= values * (1.0 - 1e-9))

    @pytest.mark.parametrize("offset,expected", [((0.2, 0.0), 0.0), ((0.2, 0.2), math.pi / 4)])
    def test_pair_angle(self, grid, offset, expected):
        """Test the principal-axis angle of a vortex pair"""
        blobs = [
            VorticityBlob(center=offset, radius=0.05),
            VorticityBlob(center=(-offset[0], -offset[1]), radius=0.05, amplitude=-1.0),
        ]
        assert pair_angle(sample_blobs(blobs, grid)) == pytest.approx(expected, abs=1e-6)

    def test_pressure_gauge(self, state):
        """Test that the pressure has zero mean on the gauge disk"""
        p = euler_pressure(state, gauge_radius=0.5)
        X, Y = state.omega.grid.mesh()
        gauge = np.hypot(X, Y) < 0.5
        assert abs(p.values[gauge].mean()) < 1e-10 * np.max(np.abs(p.values))
        assert np.max(np.abs(p.values)) > 0


@pytest.mark.slow
class TestEulerOracles:
    """Steady and rotating configurations with known motion"""

    def setup_method(self):
        """Setup test fixtures"""
        self.pair_grid = Grid(origin=(-1.0, -1.0), h=0.01, nx=201, ny=201)
        self.pair = [
            VorticityBlob(kind=BlobKind.BUMP, center=(0.25, 0.0), radius=0.15, amplitude=20.0),
            VorticityBlob(kind=BlobKind.BUMP, center=(-0.25, 0.0), radius=0.15, amplitude=20.0),
        ]

    def _quarter_turn(self, omega):
        # point-vortex rate Gamma / (pi d^2) for one vortex of the pair, d = 0.5
        gamma = 0.5 * float(omega.values.sum() * omega.grid.cell_area)
        return 0.5 * math.pi / (gamma / (math.pi * 0.5**2))

    def test_radial_vortex_is_steady(self):
        """Test that a radial vortex keeps its vorticity and norms"""
        grid = Grid(origin=(-1.0, -1.0), h=2.0 / 255, nx=256, ny=256)
        state = EulerState.from_vorticity(
            VorticityBlob(kind=BlobKind.BUMP, center=(0.0, 0.0), radius=0.3, amplitude=2.0).sample(grid)
        )
        trajectory = EulerSolver().run(state, 1.0, _aligned_step(state, 1.0, 10), n_snapshots=10)
        assert _relative_l2(trajectory.final.omega, state.omega) <= 1e-3
        drift = trajectory.drift()
        assert drift["l1"] <= settings.euler.drift_l1
        assert drift["l2"] <= settings.euler.drift_l2
        assert drift["linf"] <= settings.euler.drift_linf
        assert trajectory.drift_flags() == []

    def test_pair_rotates_at_point_vortex_rate(self):
        """Test the quarter-turn time of a co-rotating pair against the point-vortex rate"""
        state = EulerState.from_vorticity(sample_blobs(self.pair, self.pair_grid))
        T = self._quarter_turn(state.omega)
        trajectory = EulerSolver().run(state, T, _aligned_step(state, T, 16), n_snapshots=16)
        angles = np.unwrap(2.0 * np.array([pair_angle(s.omega) for s in trajectory.snapshots])) / 2.0
        turned = angles[-1] - angles[0]
        assert abs(turned - 0.5 * math.pi) <= 0.05 * 0.5 * math.pi

    def test_pair_reverse_run_returns(self):
        """Test that the pair comes back after an eighth of a turn forward and back"""
        state = EulerState.from_vorticity(sample_blobs(self.pair, self.pair_grid))
        T = 0.5 * self._quarter_turn(state.omega)
        dt = _aligned_step(state, T, 8)
        forward = EulerSolver().run(state, T, dt, n_snapshots=8)
        back = EulerSolver(reverse=True).run(EulerState.from_vorticity(forward.final.omega), T, dt, n_snapshots=8)
        assert _relative_l2(back.final.omega, state.omega) < 2e-2
