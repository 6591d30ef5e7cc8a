"""
Convergence study runner.

Each parameter point pairs an Euler run from omega0 with a penalized
Navier-Stokes run from the corrected initial data on the same periodic box,
then measures sup_t |u^{nu,eps} - u^E|_2 over the fluid at the shared
snapshot times. Points are independent; a sweep runs them on worker threads
and appends finished records to one CSV through a single writer.
"""

import asyncio
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, TypeVar

import numpy as np
import pandas as pd
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from config.settings import settings
from src.biot_savart.blobs import blobs_bounding_box, sample_blobs
from src.corrector.assembly import build_corrector, corrector_bounds
from src.cutoff.lattice_cutoff import harmonic_gradient_per_obstacle
from src.cutoff.profiles import ProfileKind, harmonic_gradient_norm
from src.errors import (
    CFLViolationError,
    DegenerateSweepError,
    NonZeroMeanError,
    SingularSystemError,
    SolverError,
    SupportError,
    UnsupportedShapeError,
)
from src.euler.diagnostics import yudovich_report
from src.euler.solver import EulerSolver, EulerState
from src.fields.calculus import lp_norm
from src.fields.grid import Grid, ScalarField, VectorField
from src.geometry.lattice import Geometry, LatticeConfig, check_disjoint, lattice_centers
from src.geometry.masks import RegionKind, rasterize_all, require_resolution
from src.initial_data.grid_solve import u0_eps_grid
from src.initial_data.images import corrected_velocity_disk
from src.ns.solver import NSSolver, NSState, SimParams
from src.observability.metrics import CFL_RETRY_COUNTER, STUDY_POINT_COUNTER
from src.observability.telemetry import get_tracer
from src.study.ledger import ledger_report
from src.study.models import (
    STUDY_COLUMNS,
    CompatibilityRule,
    PointRun,
    RateFit,
    StudyConfig,
    StudyRecord,
    bound_shape,
    improved_bound_shape,
)

logger = logging.getLogger(__name__)

ResultT = TypeVar("ResultT")

# Errors that mean the point cannot be set up as asked
SETUP_ERRORS = (ValueError, UnsupportedShapeError)
# Errors raised by a solver once the point is running
RUN_ERRORS = (SolverError, CFLViolationError, SingularSystemError, NonZeroMeanError, SupportError, FloatingPointError)


@dataclass
class PointSetup:
    geometry: Geometry
    grid: Grid
    omega: ScalarField
    fluid: np.ndarray
    solid: np.ndarray


def aligned_dt(T_end: float, dt_max: float, n_snapshots: int) -> float:
    """Largest step <= dt_max whose step count over [0, T] is a multiple of n_snapshots."""
    if not dt_max > 0:
        raise ValueError(f"Step bound must be positive, got {dt_max}")
    blocks = max(int(math.ceil(T_end / (n_snapshots * dt_max) - 1e-12)), 1)
    return T_end / (n_snapshots * blocks)


def with_cfl_retries(run: Callable[[float], ResultT], dt: float, label: str) -> ResultT:
    """Call run(dt), halving dt after each CFL violation."""
    for attempt in Retrying(
        stop=stop_after_attempt(settings.study.cfl_retries),
        retry=retry_if_exception_type(CFLViolationError),
        reraise=True,
    ):
        with attempt:
            number = attempt.retry_state.attempt_number
            step = dt / 2 ** (number - 1)
            if number > 1:
                CFL_RETRY_COUNTER.add(1, {"solver": label})
                logger.warning(f"{label} run retried with dt={step:.4g} (attempt {number})")
            return run(step)


def point_geometry(config: StudyConfig, epsilon: float, d_epsilon: float) -> Geometry:
    lattice = LatticeConfig(epsilon=epsilon, d_epsilon=d_epsilon, mu=config.mu, shape=config.shape)
    if config.control:
        return Geometry.empty(lattice)
    geometry = lattice_centers(lattice)
    if not check_disjoint(geometry):
        raise ValueError(f"Inflated cells overlap at eps={epsilon:.4g}, d={d_epsilon:.4g}")
    return geometry


def study_grid(config: StudyConfig, geometry: Geometry, n: Optional[int] = None, box: Optional[float] = None) -> Grid:
    """Periodic box centred on the obstacles and the vorticity, box_factor times their extent."""
    lower, upper = blobs_bounding_box(config.omega0)
    if geometry.count:
        g_lower, g_upper = geometry.bounding_box()
        lower = (min(lower[0], g_lower[0]), min(lower[1], g_lower[1]))
        upper = (max(upper[0], g_upper[0]), max(upper[1], g_upper[1]))
    center = (0.5 * (lower[0] + upper[0]), 0.5 * (lower[1] + upper[1]))
    diameter = max(upper[0] - lower[0], upper[1] - lower[1])
    side = box or config.grid.box or settings.study.box_factor * diameter
    return Grid.periodic_box(center, side, n or config.grid.n)


def prepare_point(
    config: StudyConfig, epsilon: float, d_epsilon: float, n: Optional[int] = None, box: Optional[float] = None
) -> PointSetup:
    geometry = point_geometry(config, epsilon, d_epsilon)
    grid = study_grid(config, geometry, n, box)
    require_resolution(geometry, grid)
    masks = rasterize_all(geometry, grid)
    omega = sample_blobs(config.omega0, grid)
    solid = masks[RegionKind.SOLID].values
    if np.any(omega.values[solid] != 0.0):
        raise SupportError("Initial vorticity must vanish on every obstacle")
    return PointSetup(geometry=geometry, grid=grid, omega=omega, fluid=masks[RegionKind.FLUID].values, solid=solid)


def corrected_initial_velocity(setup: PointSetup) -> VectorField:
    """v^eps for disks, the exterior grid solve otherwise; u0 without obstacles."""
    geometry = setup.geometry
    if geometry.count == 0:
        return EulerState.from_vorticity(setup.omega).velocity
    if geometry.shape.is_disk:
        return corrected_velocity_disk(geometry, setup.omega, setup.grid)
    return u0_eps_grid(geometry, setup.omega, setup.grid)


def simulate_point(setup: PointSetup, nu: float, T_end: float, n_snapshots: Optional[int] = None) -> PointRun:
    """Euler and NS runs with snapshots at the same times, and the corrector at each snapshot."""
    n_snapshots = n_snapshots or settings.study.snapshots
    grid = setup.grid
    euler_start = EulerState.from_vorticity(setup.omega)
    v0 = corrected_initial_velocity(setup)

    speed = max(float(np.max(euler_start.velocity.magnitude())), float(np.max(v0.magnitude())), 1e-12)
    euler_dt = aligned_dt(T_end, 0.8 * settings.euler.euler_cfl * grid.h / speed, n_snapshots)
    euler = with_cfl_retries(lambda dt: EulerSolver().run(euler_start, T_end, dt, n_snapshots), euler_dt, "euler")

    limit = SimParams.for_grid(grid, nu, T_end).dt
    ns_dt = aligned_dt(T_end, min(limit, 0.8 * settings.ns.ns_cfl * grid.h / speed), n_snapshots)
    mask = rasterize_all(setup.geometry, grid)[RegionKind.SOLID]

    def _run_ns(dt: float):
        params = SimParams.for_grid(grid, nu, T_end, n_snapshots=n_snapshots, dt=dt)
        return NSSolver().run(NSState(time=0.0, u=v0), params, mask)

    ns = with_cfl_retries(_run_ns, ns_dt, "ns")

    correctors = []
    for state in ns.snapshots:
        u_e = euler.velocity_at(state.time)
        correctors.append(build_corrector(setup.geometry, u_e))
    return PointRun(
        geometry=setup.geometry,
        grid=grid,
        fluid=setup.fluid,
        euler=euler,
        ns=ns,
        correctors=correctors,
        initial_velocity=v0,
        envelope_constant=yudovich_report(euler).envelope_constant,
    )


def error_series(run: PointRun) -> pd.DataFrame:
    """Per-snapshot |u^{nu,eps} - u^E|, |W| and |u^eps - u^E| over the fluid."""
    rows = []
    for state, corrector in zip(run.ns.snapshots, run.correctors):
        u_e = run.euler.velocity_at(state.time)
        error = lp_norm(state.u - u_e, 2.0, run.fluid)
        w = lp_norm(state.u - corrector.u_eps, 2.0, run.fluid)
        gap = lp_norm(corrector.u_eps - u_e, 2.0, run.fluid)
        rows.append(
            {
                "time": state.time,
                "error": error,
                "w_l2": w,
                "corrector_gap": gap,
                "triangle_ok": error <= (w + gap) * (1.0 + 1e-12),
            }
        )
    return pd.DataFrame(rows, columns=["time", "error", "w_l2", "corrector_gap", "triangle_ok"])


def _point_diagnostics(config: StudyConfig, record: StudyRecord, run: PointRun, series: pd.DataFrame) -> Dict[str, float]:
    diagnostics = {
        "envelope_C0": run.envelope_constant,
        "triangle_ok": bool(series["triangle_ok"].all()),
        "max_corrector_gap": float(series["corrector_gap"].max()),
        "euler_dt": run.euler.dt,
        "ns_dt": run.ns.params.dt if run.ns.params else float("nan"),
        "ns_ledger_flags": int(run.ns.ledger["flagged"].astype(bool).sum()) if len(run.ns.ledger) else 0,
    }
    if run.geometry.count:
        bounds = corrector_bounds(run.geometry, run.correctors[0], run.euler.snapshots[0].velocity)
        diagnostics.update({f"corrector_{name}": value for name, value in bounds.ratios().items()})
    if config.cutoff is ProfileKind.HARMONIC and run.geometry.count:
        diagnostics["improved_shape"] = improved_bound_shape(record.nu, record.epsilon, record.d_epsilon, record.mu)
        diagnostics["harmonic_gradient"] = harmonic_gradient_per_obstacle(run.geometry, run.grid)
        diagnostics["harmonic_gradient_closed_form"] = harmonic_gradient_norm(record.epsilon, record.d_epsilon)
    return diagnostics


def _skipped(record: StudyRecord, reason: str) -> StudyRecord:
    logger.warning(f"Point nu={record.nu:.4g} eps={record.epsilon:.4g} skipped: {reason}")
    return record.model_copy(update={"status": "skipped", "reason": reason})


def run_point(
    config: StudyConfig,
    nu: float,
    epsilon: Optional[float] = None,
    A: Optional[float] = None,
    n: Optional[int] = None,
    box: Optional[float] = None,
    check_admissible: bool = True,
    keep_fields: bool = True,
) -> StudyRecord:
    """
    One paired Euler / NS run. Inadmissible or unresolvable points come back
    with status "skipped", solver failures with status "failed"; neither raises.
    """
    started = time.perf_counter()
    tracer = get_tracer(__name__)
    with tracer.start_as_current_span("study.point") as span:
        span.set_attribute("nu", nu)
        record = _run_point(config, nu, epsilon, A, n, box, check_admissible, keep_fields)
        span.set_attribute("status", record.status)
    record.wall_seconds = time.perf_counter() - started
    STUDY_POINT_COUNTER.add(1, {"status": record.status})
    return record


def _run_point(
    config: StudyConfig,
    nu: float,
    epsilon: Optional[float],
    A: Optional[float],
    n: Optional[int],
    box: Optional[float],
    check_admissible: bool,
    keep_fields: bool,
) -> StudyRecord:
    A = A or config.A
    rule = CompatibilityRule(A=A, M0=config.m0()) if A else None
    if epsilon is None:
        if rule is None:
            raise ValueError("Tying eps to nu needs the constant A")
        epsilon = rule.tie_epsilon(nu, config.sweep.d_for, config.mu, config.sweep.epsilon_ceiling)
    d_epsilon = config.sweep.d_for(epsilon)
    admissible = rule.admissible(nu, epsilon, d_epsilon, config.mu) if rule else False
    record = StudyRecord(
        nu=nu,
        epsilon=epsilon,
        d_epsilon=d_epsilon,
        mu=config.mu,
        admissible=admissible,
        bound_shape=bound_shape(nu, d_epsilon, config.mu),
        cutoff=config.cutoff,
    )
    if check_admissible and not admissible:
        reason = "inadmissible under the compatibility constraint" if rule else "no compatibility constant A"
        return _skipped(record, reason)

    try:
        setup = prepare_point(config, epsilon, d_epsilon, n, box)
    except SETUP_ERRORS as error:
        return _skipped(record, str(error))

    try:
        run = simulate_point(setup, nu, config.sweep.T)
    except RUN_ERRORS as error:
        logger.error(f"Point nu={nu:.4g} eps={epsilon:.4g} failed: {error}")
        return record.model_copy(update={"status": "failed", "reason": str(error)})

    series = error_series(run)
    record.sup_error = float(series["error"].max())
    record.initial_error = lp_norm(run.initial_velocity - run.euler.snapshots[0].velocity, 2.0, run.fluid)
    record.fitted_BT = record.normalized_error()
    record.diagnostics = _point_diagnostics(config, record, run, series)
    record.run = run
    record.diagnostics.update(ledger_report(record).summary())
    if not keep_fields:
        record.run = None
    logger.info(
        f"Point nu={nu:.4g} eps={epsilon:.4g} d={d_epsilon:.4g}: sup error {record.sup_error:.4e}, "
        f"initial error {record.initial_error:.4e}, normalized {record.fitted_BT:.4f}"
    )
    return record


def sweep_points(config: StudyConfig) -> List[Tuple[float, Optional[float]]]:
    return [(nu, config.sweep.epsilon_at(k)) for k, nu in enumerate(config.sweep.nu)]


def calibrate_A(config: StudyConfig, provisional: float = 1.0) -> float:
    """
    Pilot run at the largest nu; A = safety M0 / (4 K3) with K3 fitted from
    the pilot's ledger. Falls back to the provisional A when K3 vanishes.
    """
    nu = max(config.sweep.nu)
    epsilon = config.sweep.epsilon_at(config.sweep.nu.index(nu))
    pilot = run_point(config, nu, epsilon, A=provisional, check_admissible=False, keep_fields=False)
    k3 = pilot.diagnostics.get("ledger_K3")
    if pilot.status != "ok" or k3 is None:
        raise DegenerateSweepError(f"Calibration pilot did not complete: {pilot.reason}")
    if not k3 > 0:
        logger.warning(f"Pilot shows no excess trilinear growth; keeping A={provisional}")
        return provisional
    A = settings.study.calibration_safety * config.m0() / (4.0 * k3)
    logger.info(f"Calibrated A={A:.4g} from pilot K3={k3:.4g} at nu={nu:.4g}")
    return A


async def _write_records(queue: asyncio.Queue, path: Path) -> None:
    """Single writer: append each finished record as one CSV row."""
    pd.DataFrame(columns=STUDY_COLUMNS).to_csv(path, index=False)
    while True:
        record = await queue.get()
        if record is None:
            queue.task_done()
            break
        pd.DataFrame([record.to_row()], columns=STUDY_COLUMNS).to_csv(path, mode="a", header=False, index=False)
        queue.task_done()


async def run_sweep(config: StudyConfig, output_dir: Optional[Path] = None, A: Optional[float] = None) -> List[StudyRecord]:
    """Run every point of the sweep with at most max_workers in flight; records come back in sweep order."""
    output_dir = Path(output_dir or settings.storage.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    A = A or config.A
    if A is None:
        A = await asyncio.to_thread(calibrate_A, config)

    queue: asyncio.Queue = asyncio.Queue()
    writer = asyncio.create_task(_write_records(queue, output_dir / "study.csv"))
    semaphore = asyncio.Semaphore(settings.study.max_workers)

    async def _run(nu: float, epsilon: Optional[float]) -> StudyRecord:
        async with semaphore:
            record = await asyncio.to_thread(run_point, config, nu, epsilon, A, keep_fields=False)
        await queue.put(record)
        return record

    points = sweep_points(config)
    logger.info(f"Sweep of {len(points)} points with A={A:.4g}, {settings.study.max_workers} workers")
    records = await asyncio.gather(*(_run(nu, eps) for nu, eps in points))
    await queue.put(None)
    await writer

    counts = pd.Series([r.status for r in records]).value_counts().to_dict()
    logger.info(f"Sweep finished: {counts}")
    return list(records)


def box_sensitivity(config: StudyConfig, nu: float, epsilon: Optional[float] = None, A: Optional[float] = None) -> Dict[str, float]:
    """Relative change of the sup error when the box side and node count are doubled (same h)."""
    base = run_point(config, nu, epsilon, A, keep_fields=False)
    if base.status != "ok":
        raise SolverError(f"Base run did not complete: {base.reason}")
    geometry = point_geometry(config, base.epsilon, base.d_epsilon)
    grid = study_grid(config, geometry)
    doubled = run_point(config, nu, base.epsilon, A, n=2 * grid.nx, box=2 * grid.nx * grid.h, keep_fields=False)
    if doubled.status != "ok":
        raise SolverError(f"Doubled-box run did not complete: {doubled.reason}")
    change = abs(doubled.sup_error - base.sup_error) / base.sup_error if base.sup_error else 0.0
    logger.info(f"Box sensitivity at nu={nu:.4g}: relative change {change:.3%}")
    return {"base_error": base.sup_error, "doubled_error": doubled.sup_error, "relative_change": change}


def refinement_sensitivity(records: List[StudyRecord], refined: List[StudyRecord]) -> float:
    """Relative change of the sweep's B_T between a grid and its refinement."""
    coarse = max((r.fitted_BT for r in records if r.completed), default=None)
    fine = max((r.fitted_BT for r in refined if r.completed), default=None)
    if coarse is None or fine is None:
        raise DegenerateSweepError("Both sweeps need completed points")
    return abs(fine - coarse) / coarse


def rate_fit(records: List[StudyRecord], shape: str = "bound_shape") -> RateFit:
    """Slope of log(sup error) on log(shape) and the largest normalized error."""
    points = [r for r in records if r.completed and r.admissible and r.sup_error > 0]
    if len(points) < 3:
        raise DegenerateSweepError(f"Rate fit needs at least 3 completed admissible points, got {len(points)}")
    if shape == "bound_shape":
        shapes = np.array([r.bound_shape for r in points])
    else:
        shapes = np.array([r.diagnostics.get(shape, np.nan) for r in points])
    if not np.all(np.isfinite(shapes)) or np.ptp(np.log(shapes)) == 0.0:
        raise DegenerateSweepError(f"Shape '{shape}' does not vary across the sweep")

    x = np.log(shapes)
    y = np.log([r.sup_error for r in points])
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (slope * x + intercept)
    fitted = max(r.sup_error / (s + (r.initial_error or 0.0)) for r, s in zip(points, shapes))
    fit = RateFit(
        slope=float(slope),
        intercept=float(intercept),
        fitted_BT=float(fitted),
        residuals=[float(v) for v in residuals],
        n_points=len(points),
        shape=shape,
        group={"mu": points[0].mu, "cutoff": points[0].cutoff.value},
    )
    logger.info(f"Rate fit on {shape}: slope {fit.slope:.3f}, B_T {fit.fitted_BT:.4f} over {fit.n_points} points")
    return fit


def fit_sweeps(records: List[StudyRecord]) -> List[RateFit]:
    """One fit per (mu, cutoff) group, plus the improved shape on harmonic groups."""
    groups: Dict[Tuple[float, str], List[StudyRecord]] = {}
    for record in records:
        groups.setdefault((record.mu, record.cutoff.value), []).append(record)
    fits = []
    for (mu, cutoff), members in groups.items():
        shapes = ["bound_shape"] + (["improved_shape"] if cutoff == ProfileKind.HARMONIC.value else [])
        for shape in shapes:
            try:
                fits.append(rate_fit(members, shape))
            except DegenerateSweepError as error:
                logger.warning(f"No rate fit for mu={mu} cutoff={cutoff} on {shape}: {error}")
    return fits


def monotone_in_nu(records: List[StudyRecord], noise: float = 0.1) -> bool:
    """sup error nonincreasing as nu decreases, up to relative noise."""
    done = sorted((r for r in records if r.completed), key=lambda r: -r.nu)
    return all(b.sup_error <= a.sup_error * (1.0 + noise) for a, b in zip(done, done[1:]))


def write_summary(records: List[StudyRecord], fits: List[RateFit], path: Path) -> Path:
    """Markdown table of the points followed by the rate fits."""
    path = Path(path)
    lines = ["# Convergence study", "", "| " + " | ".join(STUDY_COLUMNS + ["status"]) + " |"]
    lines.append("|" + "---|" * (len(STUDY_COLUMNS) + 1))
    for record in records:
        row = record.to_row()
        cells = [f"{row[c]:.4g}" if isinstance(row[c], float) else str(row[c]) for c in STUDY_COLUMNS]
        lines.append("| " + " | ".join(cells + [record.status]) + " |")
    lines += ["", "## Rate fits", ""]
    if not fits:
        lines.append("No sweep had enough completed admissible points.")
    for fit in fits:
        lines.append(
            f"- mu={fit.group.get('mu')} cutoff={fit.group.get('cutoff')} shape={fit.shape}: "
            f"slope {fit.slope:.3f}, fitted B_T {fit.fitted_BT:.4f}, {fit.n_points} points, "
            f"max |residual| {max(abs(r) for r in fit.residuals):.3f}"
        )
    lines.append(f"- monotone in nu (10% noise): {monotone_in_nu(records)}")
    skipped = [r for r in records if r.status != "ok"]
    if skipped:
        lines += ["", "## Points not completed", ""]
        lines += [f"- nu={r.nu:.4g} eps={r.epsilon:.4g}: {r.status} ({r.reason})" for r in skipped]
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Summary written to {path}")
    return path
