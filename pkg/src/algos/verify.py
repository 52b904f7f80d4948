"""
The named invariant suite behind the verify command. Every check takes a
VerifyContext and returns a CheckResult; expensive pieces (the simulation,
the stationary state, the trace constant) are computed once per context.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
import logging
import math
from typing import Callable

import numpy as np

from algos import analysis, steady, transport
from algos import signal as signal_solver
from util import profile
from util.config import RunConfig, build_problem
from util.errors import NumericalError, StabilityError
from util.grid import (
    BoundaryData,
    CellField,
    boundary_data,
    boundary_integrate,
    build_mesh,
    cell_centers,
    discrete_lambda1,
    face_gradient,
    integrate,
    mirror,
    neumann_lambda1,
)
from util.initial import initial_density

logger = logging.getLogger(__name__)

MASS_RTOL = 1e-12
SIGNAL_ATOL = 1e-12
STATIONARY_RESIDUAL = 1e-10
NONCONSTANT_ATOL = 1e-6
CHI_VALUES = (0.5, 2.0)
CHI_HORIZON = 1.0
"""
Final time of the paired runs in the chi-rescaling checks
"""
TRACE_VALIDATION_SAMPLES = 1000
QUADRATURE_RTOL = 1e-12
REFINEMENTS = (1, 2, 4)
"""
Cell count multipliers of the configured mesh in the eigenvalue refinement
"""
ORACLE_CELLS = (16, 32, 64, 128)
ORDER_RATIO = 0.3
"""
Largest error ratio per halving of h accepted as second order
"""
STRUCTURE_RTOL = 1e-10
K_SAMPLES = 50
MIRROR_STEPS = 100
MIRROR_RTOL = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    values: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "detail": self.detail,
            "values": {k: float(v) for k, v in self.values.items()},
        }


class VerifyContext:
    """
    One configuration under test.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.mesh, self.bc = build_problem(config)
        self.n0 = initial_density(self.mesh, config.init)
        self.m = integrate(self.n0)

    @cached_property
    def records(self) -> list[transport.Record]:
        return transport.simulate(self.config)

    @cached_property
    def stationary(self) -> steady.StationaryState:
        return steady.stationary_for(self.config, self.bc, self.m)

    @cached_property
    def reports(self) -> list[analysis.EnergyReport]:
        return analysis.energy_reports(self.records, self.stationary, self.bc)

    @cached_property
    def c_trace(self) -> float:
        return analysis.trace_constant_for(self.config, self.mesh)

    @cached_property
    def K(self) -> float:
        return analysis.K_of(analysis.k_inputs_for(self.bc, self.m, self.c_trace))

    @property
    def has_stationary(self) -> bool:
        return self.config.analysis.stationary and self.bc.gmin > 0


def stable_dt_cap(ctx: VerifyContext) -> CheckResult:
    """
    A configured dt_cap must not exceed the stable step of the initial state.
    """
    solver = ctx.config.solver
    c = signal_solver.solve_signal(ctx.n0, ctx.bc, solver.elliptic_tol, solver.linear_solver)
    limit = transport.stable_dt(ctx.mesh, transport.drift(c, ctx.config.params.chi))
    cap = ctx.config.time.dt_cap
    values = {"stable_dt": limit}
    if cap is None:
        return CheckResult("stable-dt-cap", True, "no dt_cap configured", values)
    values["dt_cap"] = cap
    if cap > limit:
        error = StabilityError(f"dt_cap = {cap:.6g} exceeds stable_dt = {limit:.6g}")
        return CheckResult("stable-dt-cap", False, str(error), values)
    return CheckResult("stable-dt-cap", True, "", values)


def mass_conservation(ctx: VerifyContext) -> CheckResult:
    m0 = ctx.records[0].state.mass
    drift = max(abs(r.state.mass - m0) for r in ctx.records) / m0
    return CheckResult(
        "mass-conservation", drift <= MASS_RTOL, "", {"relative_drift": drift}
    )


def positivity(ctx: VerifyContext) -> CheckResult:
    low = min(r.state.n.min() for r in ctx.records)
    return CheckResult("positivity", low > 0, "", {"min_n": low})


def signal_bounds(ctx: VerifyContext) -> CheckResult:
    """
    0 <= c <= gamma at every record, strictly below gamma when every g > 0.
    """
    gamma = ctx.bc.gamma
    low = min(r.signal.c.min() for r in ctx.records)
    high = max(r.signal.c.max() for r in ctx.records)
    face_high = max(float(np.max(r.signal.c_b)) for r in ctx.records)
    passed = low >= 0 and max(high, face_high) <= gamma + SIGNAL_ATOL
    detail = ""
    if passed and gamma > 0 and ctx.bc.gmin > 0 and not high < gamma:
        passed, detail = False, "max c reached gamma"
    return CheckResult(
        "signal-bounds", passed, detail, {"min_c": low, "max_c": high, "gamma": gamma}
    )


def boundedness(ctx: VerifyContext) -> CheckResult:
    holds, ratios = analysis.check_boundedness(ctx.records)
    return CheckResult("boundedness", holds, "", ratios)


def stationary_state(ctx: VerifyContext) -> CheckResult:
    """
    Residuals, mass and the multiplier bracket of the stationary state.
    """
    if not ctx.has_stationary:
        return CheckResult("stationary", True, "skipped: needs g > 0 and [analysis] stationary")
    stat = ctx.stationary
    chi_gamma = ctx.config.params.chi * ctx.bc.gamma
    lo = ctx.m / (math.exp(chi_gamma) * ctx.mesh.volume)
    hi = ctx.m / ctx.mesh.volume
    mass_error = stat.mass_residual / ctx.m
    passed = (
        stat.elliptic_residual <= STATIONARY_RESIDUAL
        and mass_error <= ctx.config.solver.mass_tol
        and lo * (1 - 1e-12) <= stat.alpha <= hi * (1 + 1e-12)
        and stat.c.min() >= 0
        and stat.c.max() <= ctx.bc.gamma + SIGNAL_ATOL
    )
    return CheckResult(
        "stationary",
        passed,
        "",
        {
            "alpha": stat.alpha,
            "alpha_low": lo,
            "alpha_high": hi,
            "residual": stat.elliptic_residual,
            "mass_error": mass_error,
        },
    )


def nonconstant_stationary(ctx: VerifyContext) -> CheckResult:
    if not ctx.has_stationary or ctx.bc.gamma == 0:
        return CheckResult("nonconstant-stationary", True, "skipped: gamma == 0 or no stationary state")
    spread = ctx.stationary.n.max() - ctx.stationary.n.min()
    return CheckResult(
        "nonconstant-stationary", spread > NONCONSTANT_ATOL, "", {"spread": spread}
    )


def energy_36(ctx: VerifyContext) -> CheckResult:
    if not ctx.has_stationary:
        return CheckResult("energy-36", True, "skipped: no stationary state")
    failures = [
        r.t
        for r in ctx.records
        if not analysis.check_energy_inequality(r.state.n, r.signal, ctx.stationary, ctx.bc)[2]
    ]
    detail = f"fails at t = {failures[:5]}" if failures else ""
    return CheckResult("energy-36", not failures, detail, {"failures": len(failures)})


def energy_35(ctx: VerifyContext) -> CheckResult:
    if not ctx.has_stationary:
        return CheckResult("energy-35", True, "skipped: no stationary state")
    chi = ctx.config.params.chi
    failures = [
        r.t
        for r in ctx.records
        if not analysis.check_energy_35(r.state.n, r.signal, ctx.stationary, ctx.bc, chi)[2]
    ]
    detail = f"fails at t = {failures[:5]}" if failures else ""
    return CheckResult("energy-35", not failures, detail, {"failures": len(failures)})


def integral_34(ctx: VerifyContext) -> CheckResult:
    if not ctx.has_stationary:
        return CheckResult("integral-34", True, "skipped: no stationary state")
    lhs, rhs, holds = analysis.check_34(ctx.reports, ctx.K)
    return CheckResult("integral-34", holds, "", {"K": ctx.K, "lhs": lhs, "rhs": rhs})


def convergence(ctx: VerifyContext) -> CheckResult:
    """
    Predicted convergence: asserted only when the indicative K is positive.
    """
    if not ctx.has_stationary or len(ctx.reports) < analysis.MIN_RECORDS:
        return CheckResult("convergence", True, "skipped: no stationary state or too few records")
    converged, rate = analysis.detect_convergence(ctx.reports)
    values = {"K": ctx.K, "rate": rate, "final_E_n": ctx.reports[-1].E_n}
    if ctx.K <= 0:
        return CheckResult("convergence", True, "K <= 0: no prediction", values)
    return CheckResult("convergence", converged, "", values)


def trace_constant(ctx: VerifyContext) -> CheckResult:
    a = ctx.config.analysis
    ratio, holds = analysis.validate_trace_constant(
        ctx.mesh, ctx.c_trace, a.trace_q, a.trace_lambda, TRACE_VALIDATION_SAMPLES
    )
    return CheckResult(
        "trace-constant", holds, "", {"c_trace": ctx.c_trace, "validation_ratio": ratio}
    )


def poincare(ctx: VerifyContext) -> CheckResult:
    worst, holds = analysis.check_poincare(ctx.mesh, seed=ctx.config.analysis.seed)
    return CheckResult("poincare", holds, "", {"worst_ratio": worst})


def quadrature(ctx: VerifyContext) -> CheckResult:
    """
    Midpoint and boundary quadrature of constants, and centered face
    gradients of linear fields, are exact on the configured mesh.
    """
    mesh = ctx.mesh
    volume_error = abs(integrate(CellField.constant(mesh, 2.5)) - 2.5 * mesh.volume)
    perimeter = 2.0 if mesh.ndim == 1 else 2.0 * sum(mesh.lengths)
    boundary_error = abs(boundary_integrate(mesh, np.ones(mesh.nfaces)) - perimeter)
    centers = cell_centers(mesh)
    gradient_error = 0.0
    for axis in range(mesh.ndim):
        gradient = face_gradient(CellField(mesh, centers[:, axis]))
        expected = np.where(mesh.interior_axis == axis, 1.0, 0.0)
        gradient_error = max(gradient_error, float(np.max(np.abs(gradient - expected))))
    passed = (
        volume_error <= QUADRATURE_RTOL * mesh.volume
        and boundary_error <= QUADRATURE_RTOL * perimeter
        and gradient_error <= QUADRATURE_RTOL * max(mesh.lengths) / min(mesh.spacing)
    )
    return CheckResult(
        "quadrature",
        passed,
        "",
        {
            "volume_error": volume_error,
            "boundary_error": boundary_error,
            "gradient_error": gradient_error,
        },
    )


def lambda1_refinement(ctx: VerifyContext) -> CheckResult:
    """
    The discrete Neumann eigenvalue approaches pi^2 / L^2 at second order
    under refinement of the configured mesh.
    """
    mesh = ctx.mesh
    errors = []
    for factor in REFINEMENTS:
        fine = build_mesh(mesh.kind, mesh.lengths, [n * factor for n in mesh.shape])
        errors.append(abs(discrete_lambda1(fine) - neumann_lambda1(fine)))
    ratios = [f / c for c, f in zip(errors, errors[1:])]
    passed = all(0 < f < c for c, f in zip(errors, errors[1:])) and max(ratios) <= ORDER_RATIO
    values = {f"error_x{k}": e for k, e in zip(REFINEMENTS, errors)}
    return CheckResult("lambda1-refinement", passed, "", values | {"worst_ratio": max(ratios)})


def signal_monotonicity(ctx: VerifyContext) -> CheckResult:
    """
    More cells consume more oxygen: adding density never raises c.
    """
    solver = ctx.config.solver
    rng = np.random.default_rng(ctx.config.analysis.seed)
    extra = rng.uniform(0.0, 1.0, ctx.mesh.ncells) * ctx.n0.max()
    bigger = CellField(ctx.mesh, ctx.n0.values + extra)
    c_small = signal_solver.solve_signal(ctx.n0, ctx.bc, solver.elliptic_tol, solver.linear_solver)
    c_big = signal_solver.solve_signal(bigger, ctx.bc, solver.elliptic_tol, solver.linear_solver)
    excess = float(np.max(c_big.c.values - c_small.c.values))
    return CheckResult("signal-monotonicity", excess <= SIGNAL_ATOL, "", {"max_increase": excess})


def cosh_oracle(x: np.ndarray) -> np.ndarray:
    """
    Solution of c'' = 4c on (0, 1) with c' = (1 - c) on the boundary.
    """
    A = 1 / (2 * math.sinh(1) + math.cosh(1))
    return A * np.cosh(2 * (x - 0.5))


def signal_order(ctx: VerifyContext) -> CheckResult:
    """
    Second order convergence of the signal solver to the closed-form
    solution for n = 4, gamma = 1, g = 1 on the unit interval.
    """
    method = ctx.config.solver.linear_solver
    errors = []
    for cells in ORACLE_CELLS:
        mesh = build_mesh("interval", [1.0], [cells])
        bc = boundary_data(mesh, 1.0, 1.0)
        sol = signal_solver.solve_signal(CellField.constant(mesh, 4.0), bc, method=method)
        x = cell_centers(mesh)[:, 0]
        errors.append(float(np.max(np.abs(sol.c.values - cosh_oracle(x)))))
    worst = max(f / c for c, f in zip(errors, errors[1:]))
    values = {f"error_{cells}": e for cells, e in zip(ORACLE_CELLS, errors)}
    return CheckResult("signal-order", worst <= ORDER_RATIO, "", values | {"worst_ratio": worst})


def stationary_structure(ctx: VerifyContext) -> CheckResult:
    """
    The stationary density is alpha exp(chi c) cell by cell.
    """
    if not ctx.has_stationary:
        return CheckResult("stationary-structure", True, "skipped: no stationary state")
    stat = ctx.stationary
    chi = ctx.config.params.chi
    ratio = stat.n.values / np.exp(chi * stat.c.values)
    spread = float(np.max(np.abs(ratio - stat.alpha))) / stat.alpha
    return CheckResult(
        "stationary-structure", spread <= STRUCTURE_RTOL, "", {"alpha": stat.alpha, "spread": spread}
    )


def K_monotone(ctx: VerifyContext) -> CheckResult:
    """
    The threshold K strictly decreases in gamma at the configured m and g.
    """
    gammas = np.linspace(0.0, max(1.0, 2.0 * ctx.bc.gamma), K_SAMPLES)
    values = np.array(
        [
            analysis.K_of(analysis.k_inputs_for(ctx.bc.with_gamma(float(g)), ctx.m, ctx.c_trace))
            for g in gammas
        ]
    )
    steps = np.diff(values)
    return CheckResult(
        "K-monotone",
        bool(np.all(steps < 0)),
        "",
        {"K_first": values[0], "K_last": values[-1], "max_step": float(np.max(steps))},
    )


def mirror_symmetry(ctx: VerifyContext) -> CheckResult:
    """
    Reflecting the initial density across the vertical midline, and
    swapping g_left with g_right, reflects the whole run.
    """
    config = ctx.config
    params = config.params
    flipped = replace(params, g_left=params.g_right, g_right=params.g_left)
    bc_flipped = boundary_data(ctx.mesh, ctx.bc.gamma, params.g, flipped.g_sides())
    solver = config.solver

    def solve(state: transport.TransportState, bc: BoundaryData) -> signal_solver.SignalSolution:
        return signal_solver.solve_signal(state.n, bc, solver.elliptic_tol, solver.linear_solver)

    n_flipped = mirror(ctx.n0)
    a = transport.TransportState(0.0, ctx.n0, integrate(ctx.n0))
    b = transport.TransportState(0.0, n_flipped, integrate(n_flipped))
    for step in range(MIRROR_STEPS):
        c_a, c_b = solve(a, ctx.bc), solve(b, bc_flipped)
        dt = 0.5 * transport.stable_dt(ctx.mesh, transport.drift(c_a, params.chi))
        a = transport.advance(a, c_a, dt, params.chi, solver.flux)
        b = transport.advance(b, c_b, dt, params.chi, solver.flux)
    deviation = float(np.max(np.abs(b.n.values - mirror(a.n).values)))
    scale = max(a.n.max(), b.n.max())
    return CheckResult(
        "mirror-symmetry", deviation <= MIRROR_RTOL * scale, "", {"deviation": deviation, "t": a.t}
    )


def _chi_rescaling(chi: float) -> Callable[[VerifyContext], CheckResult]:
    def check(ctx: VerifyContext) -> CheckResult:
        time = ctx.config.time
        horizon = min(time.t_end, CHI_HORIZON)
        config = replace(ctx.config, time=replace(time, t_end=horizon))
        return CheckResult(f"chi-rescaling-{chi:g}", analysis.chi_check(config, chi))

    return check


checks: dict[str, Callable[[VerifyContext], CheckResult]] = {
    "stable-dt-cap": stable_dt_cap,
    "mass-conservation": mass_conservation,
    "positivity": positivity,
    "signal-bounds": signal_bounds,
    "boundedness": boundedness,
    "stationary": stationary_state,
    "nonconstant-stationary": nonconstant_stationary,
    "energy-36": energy_36,
    "energy-35": energy_35,
    "integral-34": integral_34,
    "convergence": convergence,
    "trace-constant": trace_constant,
    "poincare": poincare,
    "quadrature": quadrature,
    "lambda1-refinement": lambda1_refinement,
    "signal-monotonicity": signal_monotonicity,
    "signal-order": signal_order,
    "stationary-structure": stationary_structure,
    "K-monotone": K_monotone,
    "mirror-symmetry": mirror_symmetry,
    **{f"chi-rescaling-{chi:g}": _chi_rescaling(chi) for chi in CHI_VALUES},
}
"""
Invariant checks by name, in the order the suite runs them.
"""


@profile.timer("verify.run_checks")
def run_checks(config: RunConfig, names: list[str] | None = None) -> list[CheckResult]:
    """
    Run the named checks (all of them by default). A check that raises a
    NumericalError fails with the error as its detail.
    """
    ctx = VerifyContext(config)
    results = []
    for name in names or list(checks):
        try:
            result = checks[name](ctx)
        except NumericalError as e:
            result = CheckResult(name, False, f"{type(e).__name__}: {e}")
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, "%-24s %s %s", name, "ok" if result.passed else "FAILED", result.detail)
        results.append(result)
    return results
