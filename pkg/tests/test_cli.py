"""
Tests for the command-line entry point.
"""

import json
import math

import pandas as pd
import pytest

from src.fields.snapshot import read_snapshot
from src.observability.telemetry import setup_telemetry
from src.study.cli import CONSTANTS_COLUMNS, CUTOFF_COLUMNS, build_parser, cmd_cutoff_norms, main


class TestParser:
    """Argument parsing"""

    def setup_method(self):
        """Setup test fixtures"""
        self.parser = build_parser()

    def test_cutoff_defaults(self):
        """Test the cutoff-norms defaults"""
        args = self.parser.parse_args(["cutoff-norms", "--epsilon", "0.1", "0.05"])
        assert args.epsilon == [0.1, 0.05]
        assert args.mu == [1.0] and args.p == [2.0, 4.0]
        assert args.handler is cmd_cutoff_norms

    def test_command_required(self):
        """Test that a subcommand is required"""
        with pytest.raises(SystemExit):
            self.parser.parse_args([])

    def test_power_rule_needs_alpha(self, tmp_path):
        """Test the d-rule argument check"""
        with pytest.raises(SystemExit):
            main(["cutoff-norms", "--epsilon", "0.1", "--d-rule", "power", "--output", str(tmp_path / "c.csv")])


def test_cutoff_norms_table(tmp_path):
    """Test the cutoff norm CSV"""
    output = tmp_path / "cutoff.csv"
    assert main(["cutoff-norms", "--epsilon", "0.25", "--p", "2", "--output", str(output)]) == 0
    table = pd.read_csv(output)
    assert list(table.columns) == CUTOFF_COLUMNS
    assert len(table) == 1
    assert table["ratio"].iloc[0] == pytest.approx(table["lhs"].iloc[0] / table["bound_shape"].iloc[0])


def test_constants_table(tmp_path):
    """Test the reference-cell constants CSV"""
    output = tmp_path / "constants.csv"
    argv = ["constants", "--p", "2", "--resolution", "32", "--ensemble-size", "20", "--seed", "1", "--output", str(output)]
    assert main(argv) == 0
    table = pd.read_csv(output)
    assert list(table.columns) == CONSTANTS_COLUMNS
    assert (table["K1"] > 0).all()


def test_ns_taylor_green_run(tmp_path):
    """Test snapshots and the energy ledger of a Taylor-Green run"""
    config = tmp_path / "ns.json"
    config.write_text(
        json.dumps({"nu": 0.05, "T": 0.1, "taylor_green": {"k": 1}, "grid": {"n": 32, "box": 2.0 * math.pi}, "n_snapshots": 2})
    )
    out = tmp_path / "ns"
    assert main(["ns", "--config", str(config), "--output-dir", str(out)]) == 0
    snapshot = read_snapshot(out / "u_0000.pflow")
    assert snapshot.values.shape == (2, 32, 32)
    assert (out / "u_0002.pflow").exists()
    ledger = pd.read_csv(out / "energy_ledger.csv")
    assert not ledger["flagged"].any()


def test_euler_run(tmp_path):
    """Test the Euler snapshots and conserved-quantity series"""
    config = tmp_path / "euler.json"
    config.write_text(
        json.dumps(
            {
                "omega0": [{"kind": "bump", "center": [0.0, 0.0], "radius": 0.4}],
                "grid": {"n": 32},
                "T": 0.05,
                "n_snapshots": 2,
            }
        )
    )
    out = tmp_path / "euler"
    assert main(["euler", "--config", str(config), "--output-dir", str(out)]) == 0
    assert read_snapshot(out / "omega_0000.pflow").values.shape == (32, 32)
    series = pd.read_csv(out / "conserved.csv")
    assert series["time"].iloc[-1] == pytest.approx(0.05)


def test_telemetry_disabled_by_default():
    """Test that no providers are installed without opt-in"""
    assert setup_telemetry() is False
