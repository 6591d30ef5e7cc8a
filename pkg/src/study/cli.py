"""
Command-line entry point.

    python -m src.study.cli cutoff-norms --epsilon 0.1 0.05 0.025 --mu 0 1 --p 2 4
    python -m src.study.cli constants --shape disk --p 2 4
    python -m src.study.cli initial-rate --omega0 blobs.json --epsilon 0.08 0.04 0.02 --mu 0
    python -m src.study.cli euler --config euler.json
    python -m src.study.cli ns --config ns.json
    python -m src.study.cli study --config study.json
"""

import argparse
import asyncio
import json
import logging
import math
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from config.settings import settings
from src.biot_savart.blobs import VorticityBlob, sample_blobs
from src.corrector.norms import estimate_constants
from src.cutoff.lattice_cutoff import verify_cutoff_norms
from src.cutoff.profiles import CutoffProfile, ProfileKind
from src.euler.solver import EulerSolver, EulerState
from src.fields.grid import Grid
from src.fields.snapshot import write_snapshot
from src.geometry.lattice import Geometry, LatticeConfig, ObstacleShape, ShapeKind, lattice_centers
from src.geometry.masks import RegionKind, lattice_grid, rasterize_all
from src.initial_data.rate import measure_initial_rate
from src.ns.solver import NSSolver, NSState, SimParams, energy_ledger, taylor_green
from src.observability.telemetry import setup_telemetry
from src.study.models import EulerRunConfig, NSRunConfig, StudyConfig
from src.study.runner import (
    PointSetup,
    corrected_initial_velocity,
    fit_sweeps,
    run_sweep,
    study_grid,
    write_summary,
)

logger = logging.getLogger(__name__)

CUTOFF_COLUMNS = ["epsilon", "d_epsilon", "mu", "p", "lhs", "bound_shape", "ratio"]
CONSTANTS_COLUMNS = ["shape", "p", "C_tilde", "K1", "K2", "ensemble_size"]


def _output(path: Optional[Path], name: str) -> Path:
    path = Path(path) if path else settings.storage.output_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _d_rule(rule: str, alpha: Optional[float], d_value: Optional[float]):
    if rule == "equal":
        return lambda eps: eps
    if rule == "power":
        if alpha is None:
            raise SystemExit("--alpha is required with --d-rule power")
        return lambda eps: eps**alpha
    if d_value is None:
        raise SystemExit("--d-value is required with --d-rule fixed")
    return lambda eps: d_value


def _load_blobs(path: Path) -> List[VorticityBlob]:
    data = json.loads(Path(path).read_text())
    data = data.get("omega0", data) if isinstance(data, dict) else data
    return [VorticityBlob(**blob) for blob in data]


def cmd_cutoff_norms(args: argparse.Namespace) -> Path:
    d_rule = _d_rule(args.d_rule, args.alpha, args.d_value)
    shape = ObstacleShape(kind=ShapeKind(args.shape))
    rows = []
    for mu in args.mu:
        for epsilon in args.epsilon:
            geometry = lattice_centers(LatticeConfig(epsilon=epsilon, d_epsilon=d_rule(epsilon), mu=mu, shape=shape))
            grid = lattice_grid(geometry, margin=geometry.epsilon, nodes_per_epsilon=args.nodes_per_epsilon)
            profile = None
            if args.profile == ProfileKind.HARMONIC.value:
                profile = CutoffProfile.harmonic(geometry.epsilon, geometry.d_epsilon)
            for p in args.p:
                report = verify_cutoff_norms(geometry, grid, p, profile)
                rows.append({column: getattr(report, column) for column in CUTOFF_COLUMNS})
    path = _output(args.output, "cutoff_norms.csv")
    pd.DataFrame(rows, columns=CUTOFF_COLUMNS).to_csv(path, index=False)
    return path


def cmd_constants(args: argparse.Namespace) -> Path:
    shape = ObstacleShape(kind=ShapeKind(args.shape))
    rows = [
        estimate_constants(shape, p, args.ensemble_size, args.seed, args.resolution).to_row()
        for p in args.p
    ]
    path = _output(args.output, "constants.csv")
    pd.DataFrame(rows, columns=CONSTANTS_COLUMNS).to_csv(path, index=False)
    return path


def cmd_initial_rate(args: argparse.Namespace) -> Path:
    table = measure_initial_rate(
        _load_blobs(args.omega0),
        args.epsilon,
        shape=ObstacleShape(kind=ShapeKind(args.shape)),
        mu=args.mu,
        d_rule=_d_rule(args.d_rule, args.alpha, args.d_value),
        run_grid_solve=args.grid_solve,
        nodes_per_epsilon=args.nodes_per_epsilon,
    )
    path = _output(args.output, "initial_rate.csv")
    table.to_csv(path, index=False)
    return path


def _blob_box(blobs: List[VorticityBlob], n: int, box: Optional[float], geometry: Optional[Geometry] = None) -> Grid:
    config = StudyConfig(omega0=blobs, sweep={"nu": [1.0]}, grid={"n": n, "box": box})
    lattice = geometry if geometry is not None else Geometry.empty(LatticeConfig(epsilon=1.0, d_epsilon=1.0))
    return study_grid(config, lattice)


def cmd_euler(args: argparse.Namespace) -> Path:
    config = EulerRunConfig.model_validate_json(Path(args.config).read_text())
    grid = _blob_box(config.omega0, config.grid.n, config.grid.box)
    state = EulerState.from_vorticity(sample_blobs(config.omega0, grid))
    speed = max(float(np.max(state.velocity.magnitude())), 1e-12)
    dt = config.dt or 0.8 * settings.euler.euler_cfl * grid.h / speed
    trajectory = EulerSolver().run(state, config.T, dt, config.n_snapshots)

    out = Path(args.output_dir or settings.storage.output_dir / "euler")
    for k, snapshot in enumerate(trajectory.snapshots):
        write_snapshot(out / f"omega_{k:04d}.pflow", snapshot.omega)
    path = _output(out / "conserved.csv", "conserved.csv")
    trajectory.series.to_csv(path, index=False)
    return path


def cmd_ns(args: argparse.Namespace) -> Path:
    config = NSRunConfig.model_validate_json(Path(args.config).read_text())
    geometry = lattice_centers(LatticeConfig(**config.obstacles.model_dump())) if config.obstacles else None
    if config.taylor_green is not None:
        grid = Grid.periodic_box((0.0, 0.0), config.grid.box, config.grid.n)
        u0 = taylor_green(grid, config.taylor_green.k, config.taylor_green.amplitude)
    else:
        grid = _blob_box(config.omega0, config.grid.n, config.grid.box, geometry)
        lattice = geometry if geometry is not None else Geometry.empty(LatticeConfig(epsilon=1.0, d_epsilon=1.0))
        masks = rasterize_all(lattice, grid)
        setup = PointSetup(
            geometry=lattice,
            grid=grid,
            omega=sample_blobs(config.omega0, grid),
            fluid=masks[RegionKind.FLUID].values,
            solid=masks[RegionKind.SOLID].values,
        )
        u0 = corrected_initial_velocity(setup)

    mask = rasterize_all(geometry, grid)[RegionKind.SOLID] if geometry is not None else None
    speed = max(float(np.max(u0.magnitude())), 1e-12)
    cfl_dt = 0.8 * settings.ns.ns_cfl * grid.h / speed
    params = SimParams.for_grid(grid, config.nu, config.T, config.n_snapshots, dt=min(config.dt or math.inf, cfl_dt))
    trajectory = NSSolver().run(NSState(time=0.0, u=u0), params, mask)

    out = Path(args.output_dir or settings.storage.output_dir / "ns")
    for k, snapshot in enumerate(trajectory.snapshots):
        write_snapshot(out / f"u_{k:04d}.pflow", snapshot.u)
    path = _output(out / "energy_ledger.csv", "energy_ledger.csv")
    energy_ledger(trajectory).to_csv(path, index=False)
    return path


def cmd_study(args: argparse.Namespace) -> Path:
    config = StudyConfig.model_validate_json(Path(args.config).read_text())
    out = Path(args.output_dir or settings.storage.output_dir)
    records = asyncio.run(run_sweep(config, out))
    fits = fit_sweeps(records)
    return write_summary(records, fits, out / "summary.md")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Vanishing-viscosity experiments in perforated domains")
    sub = parser.add_subparsers(dest="command", required=True)

    def lattice_arguments(p: argparse.ArgumentParser) -> None:
        p.add_argument("--epsilon", type=float, nargs="+", required=True, help="Obstacle sizes")
        p.add_argument("--d-rule", choices=["equal", "power", "fixed"], default="equal", help="How d follows eps")
        p.add_argument("--alpha", type=float, default=None, help="Exponent of the power rule")
        p.add_argument("--d-value", type=float, default=None, help="d of the fixed rule")
        p.add_argument("--shape", choices=[k.value for k in ShapeKind], default=ShapeKind.DISK.value)
        p.add_argument("--nodes-per-epsilon", type=int, default=None, help="Grid nodes per obstacle size")
        p.add_argument("--output", type=Path, default=None, help="Output CSV")

    cutoff = sub.add_parser("cutoff-norms", help="Cutoff norm scaling table")
    lattice_arguments(cutoff)
    cutoff.add_argument("--mu", type=float, nargs="+", default=[1.0])
    cutoff.add_argument("--p", type=float, nargs="+", default=[2.0, 4.0])
    cutoff.add_argument("--profile", choices=[k.value for k in ProfileKind], default=ProfileKind.SMOOTHSTEP.value)
    cutoff.set_defaults(handler=cmd_cutoff_norms)

    constants = sub.add_parser("constants", help="Reference-cell constants")
    constants.add_argument("--shape", choices=[k.value for k in ShapeKind], default=ShapeKind.DISK.value)
    constants.add_argument("--p", type=float, nargs="+", default=[2.0, 4.0])
    constants.add_argument("--ensemble-size", type=int, default=None)
    constants.add_argument("--seed", type=int, default=None)
    constants.add_argument("--resolution", type=int, default=None, help="Cells per axis on the reference cell")
    constants.add_argument("--output", type=Path, default=None)
    constants.set_defaults(handler=cmd_constants)

    rate = sub.add_parser("initial-rate", help="Corrected initial data against eps |ln eps|")
    lattice_arguments(rate)
    rate.add_argument("--omega0", type=Path, required=True, help="JSON list of vorticity blobs")
    rate.add_argument("--mu", type=float, default=1.0)
    rate.add_argument("--grid-solve", action="store_true", help="Also measure the exterior grid solve")
    rate.set_defaults(handler=cmd_initial_rate)

    for name, handler, text in (
        ("euler", cmd_euler, "Full-plane Euler run"),
        ("ns", cmd_ns, "Penalized Navier-Stokes run"),
        ("study", cmd_study, "Convergence sweep"),
    ):
        command = sub.add_parser(name, help=text)
        command.add_argument("--config", type=Path, required=True, help="JSON configuration")
        command.add_argument("--output-dir", type=Path, default=None)
        command.set_defaults(handler=handler)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.observability.log_level)
    setup_telemetry()
    args = build_parser().parse_args(argv)
    path = args.handler(args)
    logger.info(f"{args.command}: wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
