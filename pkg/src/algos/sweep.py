"""
Gamma sweeps: for every (m, |g|, gamma) point, the indicative threshold K
and whether the dynamics actually settled on the stationary state.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
import logging

from algos import analysis, steady, transport
from util.config import SweepSpec, build_problem
from util.errors import BracketViolation, DomainError, NumericalError

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ("m", "gnorm", "gamma", "K", "converged", "rate", "error")


@dataclass(frozen=True)
class SweepRow:
    m: float | None
    gnorm: float | None
    gamma: float
    K: float | None = None
    converged: bool | None = None
    rate: float | None = None
    error: str = ""


def run_point(
    spec: SweepSpec, m: float | None, gnorm: float | None, gamma: float
) -> SweepRow:
    """
    One sweep point. Numerical failures end up in the row's error field.
    """
    config = spec.point_config(m, gnorm, gamma)
    try:
        mesh, bc = build_problem(config)
        records = transport.simulate(config)
        mass = records[0].state.mass
        stat = steady.stationary_for(config, bc, mass)
        reports = analysis.energy_reports(records, stat, bc)
        c_trace = analysis.trace_constant_for(config, mesh)
        K = analysis.K_of(analysis.k_inputs_for(bc, mass, c_trace))
        converged, rate = analysis.detect_convergence(reports, spec.sweep.tail_fraction)
    except (NumericalError, DomainError, BracketViolation) as e:
        logger.warning("Sweep point m=%s g=%s gamma=%g failed: %s", m, gnorm, gamma, e)
        return SweepRow(m, gnorm, gamma, error=f"{type(e).__name__}: {e}")

    logger.info(
        "Sweep point m=%.6g g=%.6g gamma=%g: K=%.6g converged=%s rate=%.4g",
        mass,
        bc.gnorm,
        gamma,
        K,
        converged,
        rate,
    )
    return SweepRow(mass, bc.gnorm, gamma, K, converged, rate)


def _run_point(args) -> SweepRow:
    return run_point(*args)


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[SweepRow]:
    """
    Every point of the sweep, in grid order. Points are independent, so with
    jobs > 1 they run in a process pool.
    """
    tasks = [(spec, *point) for point in spec.points()]
    if jobs <= 1:
        return [_run_point(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_point, tasks))


def as_rows(rows: list[SweepRow]) -> list[list]:
    """
    Table rows in SWEEP_COLUMNS order.
    """
    return [[asdict(row)[name] for name in SWEEP_COLUMNS] for row in rows]
