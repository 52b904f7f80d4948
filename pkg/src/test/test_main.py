"""
End-to-end tests of the command line.
"""

import contextlib
import io
import json
import math
from pathlib import Path
import tempfile

import pytest

import main
from util import fileio


def test_simulate_writes_outputs():
    with tempfile.TemporaryDirectory() as tmp:
        assert main.main(["simulate", "datasets/smoke.cfg", "--out", tmp, "-q"]) == main.EXIT_OK
        out = Path(tmp)
        rows = fileio.read_csv(out / "timeseries.csv")
        assert list(rows[0]) == list(main.TIMESERIES_COLUMNS)
        assert len(rows) == 6
        m0 = float(rows[0]["mass"])
        for row in rows:
            assert abs(float(row["mass"]) - m0) <= 1e-12 * m0
            assert float(row["min_n"]) > 0
            assert row["E_n"] != ""
        assert (out / "snapshot_000005.csv").exists()
        snapshot = fileio.read_csv(out / "snapshot_000000.csv")
        assert list(snapshot[0]) == ["x", "n", "c"]
        assert len(snapshot) == 16

        manifest = json.loads((out / "run-manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["config"]["params"]["gamma"] == 0.2
        assert set(manifest["versions"]) == {"package", "python", "numpy", "scipy"}


def test_simulate_is_deterministic():
    with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
        for out in (first, second):
            assert main.main(["simulate", "datasets/smoke.cfg", "--out", out, "-q"]) == 0
        for name in ("timeseries.csv", "snapshot_000005.csv", "run-manifest.json"):
            assert (Path(first) / name).read_bytes() == (Path(second) / name).read_bytes()


def test_stationary_without_signal_is_constant():
    with tempfile.TemporaryDirectory() as tmp:
        assert main.main(["stationary", "datasets/minimal.cfg", "--out", tmp, "-q"]) == 0
        summary = json.loads((Path(tmp) / "stationary-manifest.json").read_text())["stationary"]
        assert not summary["nonconstant"]
        assert summary["alpha"] == pytest.approx(1.0)
        assert summary["max_c"] == 0.0


def test_stationary_with_signal_is_nonconstant():
    with tempfile.TemporaryDirectory() as tmp:
        assert main.main(["stationary", "datasets/stationary.cfg", "--out", tmp, "-q"]) == 0
        summary = json.loads((Path(tmp) / "stationary-manifest.json").read_text())["stationary"]
        assert summary["nonconstant"]
        assert summary["alpha_low"] <= summary["alpha"] <= summary["alpha_high"]
        assert summary["mass"] == pytest.approx(1.0)
        assert summary["elliptic_residual"] <= 1e-10
        assert 0 <= summary["min_c"] <= summary["max_c"] <= 0.5
        field = fileio.read_csv(Path(tmp) / "stationary.csv")
        assert len(field) == 64


def test_verify_passes():
    with tempfile.TemporaryDirectory() as tmp:
        assert main.main(["verify", "datasets/quick.cfg", "--out", tmp, "-q"]) == 0
        report = json.loads((Path(tmp) / "verify-report.json").read_text())
        assert report["passed"]
        names = [c["name"] for c in report["checks"]]
        assert names == list(main.checks)


def test_verify_flags_unstable_cap():
    with tempfile.TemporaryDirectory() as tmp:
        args = ["verify", "datasets/unstable.cfg", "--check", "stable-dt-cap", "--out", tmp, "-q"]
        assert main.main(args) == main.EXIT_NUMERICAL
        report = json.loads((Path(tmp) / "verify-report.json").read_text())
        assert not report["passed"]
        assert report["checks"][0]["values"]["dt_cap"] == 0.01


def test_exit_codes_for_bad_input():
    with tempfile.TemporaryDirectory() as tmp:
        assert main.main(["simulate", "datasets/bad_baseline.cfg", "--out", tmp, "-q"]) == main.EXIT_CONFIG
        assert main.main(["simulate", "datasets/bad_key.cfg", "--out", tmp, "-q"]) == main.EXIT_CONFIG
        missing = ["simulate", "datasets/does_not_exist.cfg", "--out", tmp, "-q"]
        assert main.main(missing) == main.EXIT_IO

        blocker = Path(tmp) / "not-a-directory"
        blocker.write_text("")
        args = ["simulate", "datasets/smoke.cfg", "--out", str(blocker), "-q"]
        assert main.main(args) == main.EXIT_IO


def test_sweep():
    with tempfile.TemporaryDirectory() as tmp:
        assert main.main(["sweep", "datasets/sweep.cfg", "--out", tmp, "-q"]) == 0
        rows = fileio.read_csv(Path(tmp) / "sweep.csv")
        assert [float(r["gamma"]) for r in rows] == [0.05, 0.1, 0.2]
        for row in rows:
            assert row["error"] == ""
            if float(row["K"]) > 0:
                assert row["converged"] == "True"


def test_trace_constant():
    assert main.main(["trace-constant", "datasets/quick.cfg", "-q", "--seed", "3"]) == 0


def test_profile_flag():
    with tempfile.TemporaryDirectory() as tmp:
        args = ["stationary", "datasets/stationary.cfg", "--out", tmp, "-q", "--profile"]
        assert main.main(args) == 0
        manifest = json.loads((Path(tmp) / "stationary-manifest.json").read_text())
        assert "profile" in manifest


def test_simulate_minimal():
    with tempfile.TemporaryDirectory() as tmp:
        assert main.main(["simulate", "datasets/minimal.cfg", "--out", tmp, "-q"]) == 0
        rows = fileio.read_csv(Path(tmp) / "timeseries.csv")
        m0 = float(rows[0]["mass"])
        assert float(rows[-1]["t"]) == 1.0
        assert abs(float(rows[-1]["mass"]) - m0) <= 1e-12 * m0
        assert float(rows[-1]["min_n"]) > 0


def test_simulate_reports_distance_to_stationary_state():
    with tempfile.TemporaryDirectory() as tmp:
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            assert main.main(["simulate", "datasets/smoke.cfg", "--out", tmp, "-q"]) == 0
        lines = [line for line in stdout.getvalue().splitlines() if line.startswith("|n - n_inf|_L2:")]
        assert len(lines) == 1
        deviation = float(lines[0].split(":")[1])
        rows = fileio.read_csv(Path(tmp) / "timeseries.csv")
        assert deviation == pytest.approx(math.sqrt(float(rows[-1]["E_n"])), rel=1e-3)
