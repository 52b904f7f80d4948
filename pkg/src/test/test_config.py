"""
Tests of config parsing, validation and output placement.
"""

from dataclasses import replace
import os
from pathlib import Path
import tempfile
from unittest import mock

import numpy as np
import pytest

from util import config, grid
from util.errors import ConfigError
from util.initial import initial_density


def test_minimal_defaults():
    run = config.load_config("datasets/minimal.cfg")
    assert run.domain.kind == "interval"
    assert run.domain.cells == (32,)
    assert run.params.gamma == 0.0
    assert run.params.chi == 1.0
    assert run.params.g == 1.0
    assert run.init.profile == "constant"
    assert run.time.output_every == pytest.approx(0.01)
    assert run.time.dt_cap is None
    assert run.solver.linear_solver == "direct"
    assert run.solver.flux == "exponential"
    assert run.analysis.trace_lambda == pytest.approx(1 / 3)
    assert run.output.formats == ("csv", "json")


def test_rejects_nonpositive_baseline():
    with pytest.raises(ConfigError, match="n0 > 0"):
        config.load_config("datasets/bad_baseline.cfg")


def test_rejects_negative_exchange():
    with pytest.raises(ConfigError, match="g_left"):
        config.load_config("datasets/bad_g.cfg")


def test_unknown_key_names_line():
    with pytest.raises(ConfigError) as info:
        config.load_config("datasets/bad_key.cfg")
    assert info.value.line == 8
    assert "saturation" in str(info.value)


def test_missing_file():
    with pytest.raises(OSError):
        config.load_config("datasets/does_not_exist.cfg")


def test_rejects_malformed_files():
    cases = [
        "gamma = 0.1\n",
        "[domain]\nkind = interval\nlengths = 1.0\ncells = 8\n[params]\ngamma = 0.1\n",
        "[domain]\nkind = torus\nlengths = 1.0\ncells = 8\n"
        "[params]\ngamma = 0.1\n[time]\nt_end = 1\n",
        "[domain]\nkind = interval\nlengths = 1.0\ncells = 8\n"
        "[params]\ngamma = abc\n[time]\nt_end = 1\n",
        "[domain]\nkind = interval\nlengths = 1.0\ncells = 8\n"
        "[params]\ngamma = 0.1\ng_top = 1.0\n[time]\nt_end = 1\n",
        "[domain]\nkind = interval\nlengths = 1.0\ncells = 8\n"
        "[params]\ngamma = 0.1\n[time]\nt_end = 1\n[analysis]\ntrace_lambda = 0.6\n",
        "[domain]\nkind = interval\nlengths = 1.0\ncells = 8\n"
        "[params]\ngamma = 0.1\n[time]\nt_end = 1\n[extras]\n",
    ]
    with tempfile.TemporaryDirectory() as tmp:
        for k, text in enumerate(cases):
            path = Path(tmp) / f"case{k}.cfg"
            path.write_text(text)
            with pytest.raises(ConfigError):
                config.load_config(path)


def random_config(rng: np.random.Generator) -> config.RunConfig:
    if rng.random() < 0.5:
        domain = config.DomainConfig("interval", (float(rng.uniform(0.5, 3)),), (int(rng.integers(4, 80)),))
        center = (float(rng.uniform(0, 1)),)
        center2 = (float(rng.uniform(0, 1)),)
        sides = {"g_left": float(rng.uniform(0, 2))}
    else:
        domain = config.DomainConfig(
            "rectangle",
            (float(rng.uniform(0.5, 3)), float(rng.uniform(0.5, 3))),
            (int(rng.integers(4, 30)), int(rng.integers(4, 30))),
        )
        center = (float(rng.uniform(0, 1)), float(rng.uniform(0, 1)))
        center2 = (float(rng.uniform(0, 1)), float(rng.uniform(0, 1)))
        sides = {"g_top": float(rng.uniform(0, 2))}
    return config.RunConfig(
        domain=domain,
        params=config.ParamsConfig(
            gamma=float(rng.uniform(0, 2)), chi=float(rng.uniform(0.1, 3)), **sides
        ),
        init=config.InitConfig(
            profile=str(rng.choice(config.INIT_PROFILES)),
            amplitude=float(rng.uniform(0, 2)),
            center=center,
            center2=center2,
            width=float(rng.uniform(0.05, 0.5)),
            baseline=float(rng.uniform(0.1, 2)),
            mass=float(rng.uniform(0.5, 3)) if rng.random() < 0.5 else None,
        ),
        time=config.TimeConfig(
            t_end=float(rng.uniform(0.1, 10)),
            dt_cap=float(rng.uniform(1e-4, 1e-2)) if rng.random() < 0.5 else None,
            output_every=float(rng.uniform(0.01, 1)),
        ),
        solver=config.SolverConfig(linear_solver=str(rng.choice(config.LINEAR_SOLVERS))),
        analysis=config.AnalysisConfig(seed=int(rng.integers(0, 1000)), stationary=bool(rng.random() < 0.5)),
        output=config.OutputConfig(directory="output/random", formats=("csv",)),
    )


def test_written_config_reads_back():
    rng = np.random.default_rng(11)
    with tempfile.TemporaryDirectory() as tmp:
        for trial in range(25):
            run = random_config(rng)
            config.validate(run)
            path = Path(tmp) / f"run{trial}.cfg"
            path.write_text(config.write_config(run))
            assert config.load_config(path) == run


def test_as_dict():
    run = config.load_config("datasets/quick.cfg")
    plain = config.as_dict(run)
    assert set(plain) == set(config.RUN_SECTIONS)
    assert plain["params"]["gamma"] == run.params.gamma
    assert plain["domain"]["cells"] == run.domain.cells


def test_sweep_points():
    spec = config.load_sweep("datasets/sweep.cfg")
    points = spec.points()
    assert points == [(1.0, 1.0, 0.05), (1.0, 1.0, 0.1), (1.0, 1.0, 0.2)]
    run = spec.point_config(2.0, 3.0, 0.05)
    assert run.params.gamma == 0.05
    assert run.params.g == 3.0
    assert run.init.mass == 2.0
    assert spec.sweep.tail_fraction == 0.5


def test_sweep_without_grid_keeps_template():
    spec = config.load_sweep("datasets/sweep.cfg")
    spec = replace(spec, sweep=replace(spec.sweep, masses=(), gnorms=()))
    assert spec.points() == [(None, None, 0.05), (None, None, 0.1), (None, None, 0.2)]
    run = spec.point_config(None, None, 0.2)
    assert run.init == spec.template.init
    assert run.params.g == spec.template.params.g


def test_sweep_needs_gammas():
    spec = config.load_sweep("datasets/sweep.cfg")
    with pytest.raises(ConfigError):
        config.validate_sweep(replace(spec, sweep=replace(spec.sweep, gammas=())))
    with pytest.raises(ConfigError):
        config.load_sweep("datasets/quick.cfg")


def test_output_directory_precedence():
    run = config.load_config("datasets/quick.cfg")
    with mock.patch.dict(os.environ, {config.OUT_DIR_ENV: ""}):
        assert config.output_directory(run) == Path(run.output.directory)
    with mock.patch.dict(os.environ, {config.OUT_DIR_ENV: "from-env"}):
        assert config.output_directory(run) == Path("from-env")
        assert config.output_directory(run, "from-flag") == Path("from-flag")


def test_build_problem():
    run = config.load_config("datasets/square.cfg")
    mesh, bc = config.build_problem(run)
    assert mesh.ndim == 2
    assert bc.gamma == run.params.gamma
    assert bc.gmin == 0.0
    assert grid.integrate(initial_density(mesh, run.init)) > 0
