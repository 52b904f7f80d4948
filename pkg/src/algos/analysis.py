"""
Energy diagnostics for the convergence of the dynamics to the stationary
state, the constant of the boundary trace inequality, and the checks built
on top of them.

With e = c - c_inf and d = n - n_inf the discrete scheme satisfies

    |grad e|^2 + 1/2 int n_inf e^2 <= gamma^2 / 2 int d^2 / n_inf

at every time, and whenever K(m, g, gamma) > 0

    K int_0^T int d^2 dt <= int d(0)^2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import logging
import math

import numpy as np
import scipy.integrate

from algos.signal import SignalSolution
from algos.steady import StationaryState
from algos.transport import Record, simulate
from util import profile
from util.config import RunConfig
from util.errors import DomainError
from util.grid import (
    BoundaryData,
    CellField,
    Mesh,
    boundary_integrate,
    boundary_trace,
    dirichlet_form,
    face_gradient,
    integrate,
    lq_norm,
    neumann_lambda1,
    neumann_modes,
)

logger = logging.getLogger(__name__)

ENERGY_RTOL = 1e-8
ENERGY_ATOL = 1e-14
INTEGRAL_RTOL = 1e-6
CHI_RTOL = 1e-12
TAIL_NOISE = 1e-14
"""
Increases of E_n below this are roundoff, not growth
"""
MIN_RECORDS = 10
TRACE_MODES = 20
TRACE_TERMS = 5
TRACE_SLACK = 0.05
VALIDATION_SEED = 20240607
POINCARE_SLACK = 0.05
BOUNDEDNESS_FACTOR = 10.0


@dataclass(frozen=True)
class EnergyReport:
    t: float
    E_n: float
    """
    int (n - n_inf)^2
    """
    E_grad_c: float
    """
    int |grad (c - c_inf)|^2
    """
    E_c: float
    """
    int (c - c_inf)^2
    """
    lhs36: float
    rhs36: float
    """
    gamma^2 / 2 int (n - n_inf)^2 / n_inf
    """
    cum_En: float
    """
    Trapezoid of E_n over [0, t]
    """
    mass: float
    min_n: float
    max_n: float
    min_c: float
    max_c: float


@dataclass(frozen=True)
class KInputs:
    m: float
    gnorm: float
    gamma: float
    lambda1: float
    c_trace: float
    volume: float

    def __post_init__(self):
        positive = {
            "m": self.m,
            "gnorm": self.gnorm,
            "lambda1": self.lambda1,
            "c_trace": self.c_trace,
            "volume": self.volume,
        }
        for name, value in positive.items():
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be > 0, got {value}")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")


def K_of(inputs: KInputs) -> float:
    """
    K = lambda1 / 2 - gamma (C |g| max(gamma^2 |g|^2, 1) + m gamma e^(2 gamma) / (2 |Omega|)).
    Convergence to the stationary state is guaranteed when K > 0.
    """
    gamma, gnorm = inputs.gamma, inputs.gnorm
    boundary = inputs.c_trace * gnorm * max(gamma**2 * gnorm**2, 1.0)
    interior = inputs.m * gamma * math.exp(2 * gamma) / (2 * inputs.volume)
    return 0.5 * inputs.lambda1 - gamma * (boundary + interior)


def k_inputs_for(bc: BoundaryData, m: float, c_trace: float) -> KInputs:
    mesh = bc.mesh
    return KInputs(
        m=m,
        gnorm=bc.gnorm,
        gamma=bc.gamma,
        lambda1=neumann_lambda1(mesh),
        c_trace=c_trace,
        volume=mesh.volume,
    )


def _field(c: SignalSolution | CellField) -> CellField:
    return c.c if isinstance(c, SignalSolution) else c


def _deviations(n: CellField, c, stat: StationaryState, bc: BoundaryData):
    c = _field(c)
    if not (n.mesh == c.mesh == stat.n.mesh == bc.mesh):
        raise ValueError("fields, stationary state and boundary data live on different meshes")
    return n.values - stat.n.values, c.values - stat.c.values


def check_energy_inequality(
    n: CellField,
    c: SignalSolution | CellField,
    stat: StationaryState,
    bc: BoundaryData,
    weakened: bool = False,
) -> tuple[float, float, bool]:
    """
    Compare |grad e|^2 + 1/2 int n_inf e^2 against gamma^2 / 2 int d^2 / n_inf.

    Args:
        n: Density.
        c: Signal solved from n.
        stat: Stationary state on the same mesh.
        bc: Boundary data.
        weakened: Replace 1 / n_inf by its upper bound e^gamma |Omega| / m.

    Returns: (lhs, rhs, holds)
    """
    d, e = _deviations(n, c, stat, bc)
    mesh = bc.mesh
    vol = mesh.cell_volume
    n_inf = stat.n.values
    gamma = bc.gamma

    lhs = dirichlet_form(mesh, e) + 0.5 * vol * float(np.sum(n_inf * e**2))
    if weakened:
        m = integrate(stat.n)
        rhs = gamma**2 * math.exp(gamma) * mesh.volume / (2 * m) * vol * float(np.sum(d**2))
    else:
        rhs = 0.5 * gamma**2 * vol * float(np.sum(d**2 / n_inf))
    return lhs, rhs, lhs <= rhs * (1 + ENERGY_RTOL) + ENERGY_ATOL


def check_energy_35(
    n: CellField,
    c: SignalSolution | CellField,
    stat: StationaryState,
    bc: BoundaryData,
    chi: float = 1.0,
) -> tuple[float, float, bool]:
    """
    The energy inequality with n_inf bounded below by m / (e^(chi gamma) |Omega|):

        |grad e|^2 + m / (2 e^(chi gamma) |Omega|) int e^2
            <= gamma^2 e^(chi gamma) |Omega| / (2 m) int d^2
    """
    d, e = _deviations(n, c, stat, bc)
    mesh = bc.mesh
    vol = mesh.cell_volume
    m = integrate(stat.n)
    spread = math.exp(chi * bc.gamma) * mesh.volume / m

    lhs = dirichlet_form(mesh, e) + vol * float(np.sum(e**2)) / (2 * spread)
    rhs = bc.gamma**2 * spread / 2 * vol * float(np.sum(d**2))
    return lhs, rhs, lhs <= rhs * (1 + ENERGY_RTOL) + ENERGY_ATOL


def energy_reports(
    records: list[Record], stat: StationaryState, bc: BoundaryData
) -> list[EnergyReport]:
    """
    Energies of every record against the stationary state, with the running
    time integral of E_n.
    """
    mesh = bc.mesh
    vol = mesh.cell_volume
    rows = []
    for record in records:
        n = record.state.n
        d, e = _deviations(n, record.signal, stat, bc)
        lhs, rhs, _ = check_energy_inequality(n, record.signal, stat, bc)
        rows.append(
            dict(
                t=record.t,
                E_n=vol * float(np.sum(d**2)),
                E_grad_c=dirichlet_form(mesh, e),
                E_c=vol * float(np.sum(e**2)),
                lhs36=lhs,
                rhs36=rhs,
                mass=record.state.mass,
                min_n=n.min(),
                max_n=n.max(),
                min_c=record.signal.c.min(),
                max_c=record.signal.c.max(),
            )
        )
    times = np.array([row["t"] for row in rows])
    energies = np.array([row["E_n"] for row in rows])
    cumulative = scipy.integrate.cumulative_trapezoid(energies, times, initial=0.0)
    return [EnergyReport(cum_En=float(cum), **row) for row, cum in zip(rows, cumulative)]


def check_34(reports: list[EnergyReport], K: float) -> tuple[float, float, bool]:
    """
    K times the time integral of E_n against E_n(0). Vacuous when K <= 0.

    Returns: (lhs, rhs, holds)
    """
    if not reports:
        raise ValueError("no energy reports")
    lhs = K * reports[-1].cum_En
    rhs = reports[0].E_n
    return lhs, rhs, K <= 0 or lhs <= rhs * (1 + INTEGRAL_RTOL)


def trace_window(ndim: int, q: float) -> float:
    """
    Upper end of the admissible interpolation exponents (0, q / (2N + 2q - Nq)).
    """
    return q / (2 * ndim + 2 * q - ndim * q)


def _check_trace_exponents(mesh: Mesh, q: float, lam: float):
    if not 0 < q <= 2:
        raise DomainError(f"q must lie in (0, 2], got {q}")
    window = trace_window(mesh.ndim, q)
    if not 0 < lam < window:
        raise DomainError(
            f"lambda = {lam} outside the admissible window (0, {window:g}) for q={q}, N={mesh.ndim}"
        )


def trace_ratio(mesh: Mesh, phi: np.ndarray, q: float, lam: float) -> float:
    """
    |phi|_{L2(boundary)} / (|grad phi|^(1-lam) |phi|_q^lam + |phi|_q)
    """
    boundary = math.sqrt(boundary_integrate(mesh, boundary_trace(mesh, phi) ** 2))
    grad = math.sqrt(dirichlet_form(mesh, phi))
    lq = lq_norm(mesh, phi, q)
    denom = grad ** (1 - lam) * lq**lam + lq
    return boundary / denom if denom > 0 else 0.0


def _combinations(modes: np.ndarray, samples: int, rng: np.random.Generator) -> np.ndarray:
    """
    samples random combinations of TRACE_TERMS columns of modes, one per row.
    """
    k = modes.shape[1]
    terms = min(TRACE_TERMS, k)
    fields = np.empty((samples, modes.shape[0]))
    for s in range(samples):
        idx = rng.choice(k, size=terms, replace=False)
        fields[s] = modes[:, idx] @ rng.standard_normal(terms)
    return fields


def _trace_modes(mesh: Mesh) -> np.ndarray:
    """
    Lowest Neumann modes, with the eigensolver's mode 0 replaced by the exact
    normalized constant.
    """
    _, modes = neumann_modes(mesh, TRACE_MODES)
    modes = modes.copy()
    modes[:, 0] = 1.0 / math.sqrt(mesh.volume)
    return modes


@profile.timer("analysis.estimate_trace_constant")
def estimate_trace_constant(
    mesh: Mesh, q: float = 2.0, lam: float = 1.0 / 3.0, samples: int = 200, seed: int = 42
) -> float:
    """
    Lower estimate of the trace inequality constant C in

        |phi|_{L2(boundary)} <= C (|grad phi|^(1-lam) |phi|_q^lam + |phi|_q)

    as the largest ratio over the lowest Neumann modes and random
    combinations of them.

    Raises: DomainError when lam lies outside the admissible window.
    """
    _check_trace_exponents(mesh, q, lam)
    if samples < 1:
        raise DomainError(f"samples must be >= 1, got {samples}")
    modes = _trace_modes(mesh)
    rng = np.random.default_rng(seed)
    family = np.vstack([modes.T, _combinations(modes, samples, rng)])
    estimate = max(trace_ratio(mesh, phi, q, lam) for phi in family)
    logger.info("Trace constant estimate %.6g from %d fields", estimate, len(family))
    return estimate


def validate_trace_constant(
    mesh: Mesh,
    c_trace: float,
    q: float = 2.0,
    lam: float = 1.0 / 3.0,
    samples: int = 1000,
    seed: int = VALIDATION_SEED,
) -> tuple[float, bool]:
    """
    Largest ratio over a fresh random family, relative to c_trace.

    Returns: (worst ratio / c_trace, whether it is within TRACE_SLACK)
    """
    _check_trace_exponents(mesh, q, lam)
    modes = _trace_modes(mesh)
    rng = np.random.default_rng(seed)
    worst = max(trace_ratio(mesh, phi, q, lam) for phi in _combinations(modes, samples, rng))
    ratio = worst / c_trace
    return ratio, ratio <= 1 + TRACE_SLACK


def trace_epsilon_constant(c_trace: float, lam: float, eps: float) -> float:
    """
    C_eps with |phi|_{L2(boundary)} <= eps |grad phi| + C_eps |phi|_q, from the
    interpolated form by Young's inequality.
    """
    if not 0 < lam < 1:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    if eps <= 0 or c_trace <= 0:
        raise DomainError("eps and the trace constant must be > 0")
    delta = eps / (c_trace * (1 - lam))
    return c_trace * (1 + lam * delta ** (-(1 - lam) / lam))


def trace_constant_for(config: RunConfig, mesh: Mesh) -> float:
    """
    The configured trace constant, estimated on the mesh unless overridden.
    """
    a = config.analysis
    if a.c_trace is not None:
        return a.c_trace
    return estimate_trace_constant(mesh, a.trace_q, a.trace_lambda, a.trace_samples, a.seed)


def check_poincare(
    mesh: Mesh, samples: int = 100, seed: int = 42
) -> tuple[float, bool]:
    """
    lambda1 int phi^2 / int |grad phi|^2 over the nonconstant Neumann modes and
    random zero-mean combinations of them.

    Returns: (worst ratio, whether it stays below 1 + POINCARE_SLACK)
    """
    lambda1 = neumann_lambda1(mesh)
    _, modes = neumann_modes(mesh, TRACE_MODES + 1)
    rng = np.random.default_rng(seed)
    worst = 0.0
    family = np.vstack([modes[:, 1:].T, _combinations(modes[:, 1:], samples, rng)])
    for phi in family:
        phi = phi - phi.mean()
        grad = dirichlet_form(mesh, phi)
        if grad > 0:
            worst = max(worst, lambda1 * mesh.cell_volume * float(np.sum(phi**2)) / grad)
    return worst, worst <= 1 + POINCARE_SLACK


def check_boundedness(records: list[Record]) -> tuple[bool, dict[str, float]]:
    """
    Sup of max n, max c and max |grad c| over the run against
    BOUNDEDNESS_FACTOR times their values over the first tenth of it.

    Returns: (holds, quantity -> sup / early sup)
    """
    early = max(1, math.ceil(len(records) / 10))
    series = {
        "max_n": [r.state.n.max() for r in records],
        "max_c": [r.signal.c.max() for r in records],
        "max_grad_c": [
            float(np.max(np.abs(face_gradient(r.signal.c)))) for r in records
        ],
    }
    ratios = {}
    for name, values in series.items():
        head = max(values[:early])
        ratios[name] = max(values) / head if head > 0 else (0.0 if max(values) == 0 else math.inf)
    return all(r <= BOUNDEDNESS_FACTOR for r in ratios.values()), ratios


def chi_check(config: RunConfig, chi: float) -> bool:
    """
    Run (chi, gamma) against (1, chi gamma): the densities must agree and the
    second signal must be chi times the first at every output time.
    """
    if chi <= 0:
        raise DomainError(f"chi must be > 0, got {chi}")
    gamma = config.params.gamma
    run_a = simulate(replace(config, params=replace(config.params, chi=chi)))
    run_b = simulate(
        replace(config, params=replace(config.params, chi=1.0, gamma=chi * gamma))
    )
    if len(run_a) != len(run_b):
        logger.warning("chi=%g: runs produced %d and %d records", chi, len(run_a), len(run_b))
        return False

    for a, b in zip(run_a, run_b):
        n_a, n_b = a.state.n.values, b.state.n.values
        c_a, c_b = a.signal.c.values, b.signal.c.values
        n_err = float(np.max(np.abs(n_a - n_b)))
        c_err = float(np.max(np.abs(chi * c_a - c_b)))
        if n_err > CHI_RTOL * n_a.max() or c_err > CHI_RTOL * chi * c_a.max():
            logger.warning(
                "chi=%g: mismatch at t=%g (density %.3e, signal %.3e)", chi, a.t, n_err, c_err
            )
            return False
    return True


def detect_convergence(
    reports: list[EnergyReport], tail_fraction: float = 0.5
) -> tuple[bool, float]:
    """
    Whether E_n settles: nonincreasing over the last tail_fraction of the
    records and down to 1e-12 E_n(0) + 1e-14 at the end.

    The rate is the least-squares slope of log E_n over the later half of the
    records still above that floor, so a run that has already settled
    reports the decay it went through.

    Returns: (converged, rate)
    """
    if len(reports) < MIN_RECORDS:
        raise DomainError(f"need at least {MIN_RECORDS} records, got {len(reports)}")
    if not 0 < tail_fraction <= 1:
        raise DomainError(f"tail fraction must lie in (0, 1], got {tail_fraction}")

    start = min(len(reports) - 2, int(len(reports) * (1 - tail_fraction)))
    tail = reports[start:]
    energies = np.array([r.E_n for r in tail])

    floor = 1e-12 * reports[0].E_n + 1e-14
    monotone = bool(np.all(np.diff(energies) <= TAIL_NOISE))
    settled = bool(energies[-1] <= floor)

    decaying = [r for r in reports if r.E_n > floor]
    decaying = decaying[len(decaying) // 2 :]
    rate = 0.0
    if len(decaying) >= 2:
        fit_t = np.array([r.t for r in decaying])
        fit_e = np.array([r.E_n for r in decaying])
        rate = float(np.polyfit(fit_t, np.log(fit_e), 1)[0])
    return monotone and settled, rate
