import argparse
from dataclasses import replace
import logging
from pathlib import Path
import platform
import sys

import numpy as np
import scipy

import util
from algos import analysis, checks, steady, sweep, transport, verify
from util import config as cfg
from util import fileio, profile
from util.errors import BracketViolation, ConfigError, DomainError, NumericalError
from util.grid import Mesh, cell_centers, integrate, l2_norm
from util.initial import initial_density

logger = logging.getLogger("main")

TIMESERIES_COLUMNS = (
    "t",
    "mass",
    "min_n",
    "max_n",
    "min_c",
    "max_c",
    "max_drift",
    "E_n",
    "E_grad_c",
    "E_c",
    "rhs36",
    "cum_En",
    "dt",
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


def load_run_config(args: argparse.Namespace) -> cfg.RunConfig:
    """
    Load the config named on the command line, applying --seed.
    """
    config = cfg.load_config(args.config)
    if args.seed is not None:
        config = replace(config, analysis=replace(config.analysis, seed=args.seed))
    return config


def prepare_output(config: cfg.RunConfig, args: argparse.Namespace) -> Path:
    """
    Resolve and create the output directory.
    """
    out = cfg.output_directory(config, args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def manifest(config: cfg.RunConfig, command: str) -> dict:
    """
    Everything needed to reproduce a run. No timestamps, so identical runs
    write identical files.
    """
    payload = {
        "command": command,
        "config": cfg.as_dict(config),
        "seed": config.analysis.seed,
        "versions": {
            "package": util.__version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if profile.is_enabled():
        payload["profile"] = profile.report()
    return payload


def write_field(filename: Path, mesh: Mesh, n: np.ndarray, c: np.ndarray) -> None:
    """
    Cell-center snapshot with header x[,y],n,c.
    """
    centers = cell_centers(mesh)
    header = ["x", "y"][: mesh.ndim] + ["n", "c"]
    rows = [[*map(float, xy), float(ni), float(ci)] for xy, ni, ci in zip(centers, n, c)]
    fileio.write_csv(filename, header, rows)


def timeseries_rows(records, reports) -> list[list]:
    rows = []
    for i, record in enumerate(records):
        rep = record.report
        energies = [None] * 5
        if reports is not None:
            e = reports[i]
            energies = [e.E_n, e.E_grad_c, e.E_c, e.rhs36, e.cum_En]
        rows.append(
            [
                record.t,
                rep.mass,
                rep.min_n,
                rep.max_n,
                record.signal.c.min(),
                record.signal.c.max(),
                rep.max_drift,
                *energies,
                rep.dt,
            ]
        )
    return rows


def cmd_simulate(args: argparse.Namespace) -> int:
    """
    Run the time-dependent simulation and write its time series, snapshots
    and manifest.
    """
    config = load_run_config(args)
    out = prepare_output(config, args)
    mesh, bc = cfg.build_problem(config)

    records = transport.simulate(config)
    stat, reports = None, None
    if config.analysis.stationary and bc.gmin > 0:
        stat = steady.stationary_for(config, bc, records[0].state.mass)
        reports = analysis.energy_reports(records, stat, bc)
    else:
        logger.info("No stationary state attached; energy columns stay empty")

    formats = config.output.formats
    if "csv" in formats:
        fileio.write_csv(out / "timeseries.csv", TIMESERIES_COLUMNS, timeseries_rows(records, reports))
        for k, record in enumerate(records):
            write_field(
                out / f"snapshot_{k:06d}.csv", mesh, record.state.n.values, record.signal.c.values
            )
    if "json" in formats:
        fileio.write_json(out / "run-manifest.json", manifest(config, "simulate"))
    logger.info("Wrote %d records to %s", len(records), out)

    final = records[-1]
    m0 = records[0].state.mass
    print(f"t = {final.t:g}, {len(records)} records")
    print(f"mass drift: {abs(final.state.mass - m0) / m0:.3e} (relative)")
    print(f"min n: {final.state.n.min():.6g}, max n: {final.state.n.max():.6g}")
    if stat is not None:
        deviation = l2_norm(mesh, final.state.n.values - stat.n.values)
        print(f"|n - n_inf|_L2: {deviation:.3e}")
    return EXIT_OK


def cmd_stationary(args: argparse.Namespace) -> int:
    """
    Solve for the stationary state at the initial mass.
    """
    config = load_run_config(args)
    out = prepare_output(config, args)
    mesh, bc = cfg.build_problem(config)
    m = integrate(initial_density(mesh, config.init))

    stat = steady.stationary_for(config, bc, m)
    lo, hi = steady.alpha_bracket(m, bc.with_gamma(config.params.chi * bc.gamma))
    spread = stat.n.max() - stat.n.min()
    summary = {
        "alpha": stat.alpha,
        "alpha_low": lo,
        "alpha_high": hi,
        "mass": m,
        "mass_residual": stat.mass_residual,
        "elliptic_residual": stat.elliptic_residual,
        "min_n": stat.n.min(),
        "max_n": stat.n.max(),
        "min_c": stat.c.min(),
        "max_c": stat.c.max(),
        "nonconstant": bool(spread > verify.NONCONSTANT_ATOL),
        "iterations": stat.iterations,
        "bracketed": stat.bracketed,
    }

    if "csv" in config.output.formats:
        write_field(out / "stationary.csv", mesh, stat.n.values, stat.c.values)
    if "json" in config.output.formats:
        payload = manifest(config, "stationary")
        payload["stationary"] = summary
        fileio.write_json(out / "stationary-manifest.json", payload)

    print(f"alpha_inf = {stat.alpha!r} in [{lo!r}, {hi!r}]")
    print(f"n_inf in [{summary['min_n']:.12g}, {summary['max_n']:.12g}]")
    print(f"c_inf in [{summary['min_c']:.12g}, {summary['max_c']:.12g}]")
    print(f"residual {stat.elliptic_residual:.3e}, mass residual {stat.mass_residual:.3e}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    """
    Run the invariant suite; exit 2 if any check fails.
    """
    config = load_run_config(args)
    out = prepare_output(config, args)

    results = verify.run_checks(config, args.check)
    passed = all(r.passed for r in results)
    for r in results:
        status = "ok" if r.passed else "FAILED"
        line = f"{status:>6}  {r.name}"
        if r.detail:
            line += f"  ({r.detail})"
        print(line)

    payload = manifest(config, "verify")
    payload["passed"] = passed
    payload["checks"] = [r.as_dict() for r in results]
    fileio.write_json(out / "verify-report.json", payload)

    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("Failed checks: %s", ", ".join(failed))
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """
    Run a gamma sweep and write sweep.csv.
    """
    spec = cfg.load_sweep(args.config)
    if args.seed is not None:
        template = spec.template
        spec = replace(
            spec, template=replace(template, analysis=replace(template.analysis, seed=args.seed))
        )
    out = prepare_output(spec.template, args)

    rows = sweep.run_sweep(spec, args.jobs)
    fileio.write_csv(out / "sweep.csv", sweep.SWEEP_COLUMNS, sweep.as_rows(rows))
    for row in rows:
        verdict = row.error or f"K={row.K:.6g} converged={row.converged} rate={row.rate:.4g}"
        print(f"gamma={row.gamma:g} m={row.m} g={row.gnorm}: {verdict}")
    return EXIT_OK


def cmd_trace_constant(args: argparse.Namespace) -> int:
    """
    Estimate the trace inequality constant on the configured mesh and check
    it against a fresh family of fields.
    """
    config = load_run_config(args)
    mesh, bc = cfg.build_problem(config)
    a = config.analysis

    c_trace = analysis.estimate_trace_constant(
        mesh, a.trace_q, a.trace_lambda, a.trace_samples, a.seed
    )
    ratio, holds = analysis.validate_trace_constant(mesh, c_trace, a.trace_q, a.trace_lambda)
    print(f"C_trace = {c_trace!r} (q = {a.trace_q:g}, lambda = {a.trace_lambda:g})")
    print(f"validation ratio = {ratio:.6f} ({'ok' if holds else 'FAILED'})")
    if bc.gamma > 0 and bc.gnorm > 0:
        eps = 1 / (4 * bc.gamma * bc.gnorm)
        c_eps = analysis.trace_epsilon_constant(c_trace, a.trace_lambda, eps)
        print(f"C_eps = {c_eps!r} for eps = {eps:g}")
    return EXIT_OK if holds else EXIT_NUMERICAL


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    """
    Parse args.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=str, help="Output directory (overrides config and environment)")
    common.add_argument("--seed", type=int, help="Random seed for the trace constant estimate")
    common.add_argument("--quiet", "-q", action="store_true", help="Only log warnings and errors")
    common.add_argument("--verbose", "-v", action="store_true", help="Log solver iterations")
    common.add_argument(
        "--profile",
        action="store_true",
        help="Time all of the subroutines",
    )

    parser = argparse.ArgumentParser(prog="main.py")
    subparsers = parser.add_subparsers(required=True)

    #### SIMULATE ####
    simulate_parser = subparsers.add_parser(
        "simulate",
        parents=[common],
        help="Integrate the chemotaxis-consumption system in time",
    )
    simulate_parser.add_argument("config", type=str, help="Run configuration file")
    simulate_parser.set_defaults(func=cmd_simulate)

    #### STATIONARY ####
    stationary_parser = subparsers.add_parser(
        "stationary",
        parents=[common],
        help="Solve for the stationary state at the initial mass",
    )
    stationary_parser.add_argument("config", type=str, help="Run configuration file")
    stationary_parser.set_defaults(func=cmd_stationary)

    #### VERIFY ####
    verify_parser = subparsers.add_parser(
        "verify",
        parents=[common],
        help="Run the invariant suite",
    )
    verify_parser.add_argument("config", type=str, help="Run configuration file")
    verify_parser.add_argument(
        "--check",
        action="append",
        choices=list(checks),
        help="Run only this check (repeatable)",
    )
    verify_parser.set_defaults(func=cmd_verify)

    #### SWEEP ####
    sweep_parser = subparsers.add_parser(
        "sweep",
        parents=[common],
        help="Map convergence over a grid of gamma values",
    )
    sweep_parser.add_argument("config", type=str, help="Sweep configuration file")
    sweep_parser.add_argument("--jobs", "-j", type=int, default=1, help="Worker processes")
    sweep_parser.set_defaults(func=cmd_sweep)

    #### TRACE CONSTANT ####
    trace_parser = subparsers.add_parser(
        "trace-constant",
        parents=[common],
        help="Estimate the boundary trace inequality constant",
    )
    trace_parser.add_argument("config", type=str, help="Run configuration file")
    trace_parser.set_defaults(func=cmd_trace_constant)

    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    level = logging.INFO
    if args.quiet:
        level = logging.WARNING
    elif args.verbose:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)

    if args.profile:
        profile.reset()
        profile.enable()

    try:
        return args.func(args)
    except (ConfigError, DomainError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except (NumericalError, BracketViolation) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_NUMERICAL
    except OSError as e:
        logger.error("I/O failure: %s", e)
        return EXIT_IO
    finally:
        if profile.is_enabled():
            profile.log_report()
            profile.disable()


if __name__ == "__main__":
    sys.exit(main())
