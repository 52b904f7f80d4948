"""
Stationary states at prescribed mass.

Stationary densities have the form n = alpha exp(c), which satisfies the
zero-flux density equation exactly, so only the signal equation

    0 = lap c - alpha exp(c) c,   dc/dnu = (gamma - c) g

needs a grid. The outer loop picks alpha so that integrate(n) = m. Since
0 <= c <= gamma, the multiplier always lies in [m / (e^gamma |Omega|),
m / |Omega|].
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import logging
import math

import numpy as np
import scipy.optimize

from algos import signal as signal_solver
from algos.signal import signal_operator
from algos.transport import exponential_flux
from util import profile
from util.config import RunConfig
from util.errors import (
    BracketViolation,
    DegenerateProblemError,
    DomainError,
    NumericalError,
)
from util.grid import BoundaryData, CellField, integrate

logger = logging.getLogger(__name__)

DEFAULT_MASS_TOL = 1e-10
RELAXATION = 0.8
"""
Weight of the new iterate in the damped fixed point for alpha
"""
STALL_LIMIT = 3
"""
Non-decreasing mass residuals in a row before switching to the bracket
"""
LINE_SEARCH_HALVINGS = 40


@dataclass(frozen=True, eq=False)
class StationaryState:
    alpha: float
    """
    Multiplier, n = alpha exp(c)
    """
    c: CellField
    """
    Stationary signal
    """
    n: CellField
    """
    Stationary density
    """
    mass_residual: float
    """
    |integrate(n) - m|
    """
    elliptic_residual: float
    """
    Max-norm residual of the stationary system in conservative form
    """
    iterations: int = 0
    """
    Outer iterations spent on alpha
    """
    bracketed: bool = False
    """
    Whether the bracketing fallback produced alpha
    """

    @property
    def mass(self) -> float:
        return integrate(self.n)


def _semilinear_residual(op, c: np.ndarray, alpha: float) -> np.ndarray:
    vol = op.mesh.cell_volume
    return op.A0 @ c + vol * alpha * np.exp(c) * c - op.b


@profile.timer("steady.solve_semilinear")
def solve_semilinear(
    alpha: float,
    bc: BoundaryData,
    tol: float = signal_solver.DEFAULT_TOL,
    newton_cap: int = 30,
) -> CellField:
    """
    Newton's method for lap c = alpha exp(c) c with the Robin condition,
    started from c = gamma / 2 with a halving line search.

    Args:
        alpha: Multiplier, >= 0.
        bc: Boundary data.
        tol: Max-norm tolerance on the conservative residual.
        newton_cap: Maximum Newton iterations.

    Raises:
        DomainError: alpha < 0.
        NumericalError: no convergence within newton_cap.
    """
    if alpha < 0 or not math.isfinite(alpha):
        raise DomainError(f"alpha must be finite and >= 0, got {alpha}")
    if alpha == 0 and not np.any(bc.g > 0):
        raise DegenerateProblemError("alpha == 0 and g == 0: the operator is singular")

    op = signal_operator(bc)
    vol = op.mesh.cell_volume
    c = np.full(op.mesh.ncells, 0.5 * bc.gamma)
    F = _semilinear_residual(op, c, alpha)
    rnorm = float(np.max(np.abs(F)))

    for it in range(newton_cap):
        if rnorm <= tol:
            break
        jacobian_diag = vol * alpha * np.exp(c) * (1.0 + c)
        step = signal_solver.solve_direct(op, jacobian_diag, F)

        lam = 1.0
        for _ in range(LINE_SEARCH_HALVINGS):
            trial = c - lam * step
            F_trial = _semilinear_residual(op, trial, alpha)
            r_trial = float(np.max(np.abs(F_trial)))
            if r_trial < rnorm:
                break
            lam *= 0.5
        else:
            raise NumericalError("Newton line search stalled", rnorm)

        c, F, rnorm = trial, F_trial, r_trial
        logger.debug("Newton it=%d step=%g residual=%.3e", it + 1, lam, rnorm)

    if rnorm > tol or not np.all(np.isfinite(c)):
        raise NumericalError(f"Newton did not converge in {newton_cap} iterations", rnorm)
    if c.min() < -tol or c.max() > bc.gamma + tol:
        raise NumericalError("Newton converged outside [0, gamma]", rnorm)
    return CellField(op.mesh, c)


def mass_of_alpha(
    alpha: float,
    bc: BoundaryData,
    tol: float = signal_solver.DEFAULT_TOL,
    newton_cap: int = 30,
) -> float:
    """
    alpha * integrate(exp(c(alpha))).
    """
    if alpha == 0:
        return 0.0
    c = solve_semilinear(alpha, bc, tol, newton_cap)
    return alpha * integrate(CellField(c.mesh, np.exp(c.values)))


def stationary_residual(stat: StationaryState, bc: BoundaryData) -> float:
    """
    Max-norm residual of the full stationary system: the signal equation
    with n = n_inf, and the zero-flux density equation discretized with the
    exponentially fitted flux.
    """
    mesh = bc.mesh
    elliptic = signal_solver.signal_residual(stat.c, stat.n, bc)

    n, c = stat.n.values, stat.c.values
    left, right = mesh.interior_left, mesh.interior_right
    u = (c[right] - c[left]) / mesh.interior_spacing
    F = exponential_flux(n[left], n[right], u, mesh.interior_spacing) * mesh.interior_measure
    net = np.bincount(left, weights=F, minlength=mesh.ncells) - np.bincount(
        right, weights=F, minlength=mesh.ncells
    )
    return max(elliptic, float(np.max(np.abs(net))))


def alpha_bracket(m: float, bc: BoundaryData) -> tuple[float, float]:
    """
    [m / (e^gamma |Omega|), m / |Omega|].
    """
    volume = bc.mesh.volume
    return m / (math.exp(bc.gamma) * volume), m / volume


@profile.timer("steady.solve_stationary")
def solve_stationary(
    m: float,
    bc: BoundaryData,
    tol: float = signal_solver.DEFAULT_TOL,
    mass_tol: float = DEFAULT_MASS_TOL,
    newton_cap: int = 30,
    outer_cap: int = 200,
) -> StationaryState:
    """
    The stationary state with integrate(n) = m.

    alpha follows the damped fixed point alpha <- m / integrate(exp(c(alpha))),
    started at m / (|Omega| e^(gamma/2)). If the relative mass residual fails to
    decrease STALL_LIMIT times in a row, alpha is found by bracketed root
    finding on [m / (e^gamma |Omega|), m / |Omega|] instead.

    Args:
        m: Prescribed mass, > 0.
        bc: Boundary data with min g > 0.
        tol: Elliptic tolerance.
        mass_tol: Relative mass tolerance.
        newton_cap: Newton iterations per elliptic solve.
        outer_cap: Outer iterations on alpha.

    Raises:
        BracketViolation: the analytic bracket does not bracket m.
        NumericalError: no convergence within outer_cap.
    """
    if not (m > 0 and math.isfinite(m)):
        raise DomainError(f"mass must be > 0, got {m}")
    if bc.gmin <= 0:
        raise DomainError("stationary solve needs g > 0 on every boundary face")

    lo, hi = alpha_bracket(m, bc)
    volume = bc.mesh.volume
    alpha = m / (volume * math.exp(0.5 * bc.gamma))
    prev = math.inf
    stalls = 0
    bracketed = False

    for it in range(1, outer_cap + 1):
        c = solve_semilinear(alpha, bc, tol, newton_cap)
        weight = integrate(CellField(c.mesh, np.exp(c.values)))
        r = abs(alpha * weight - m) / m
        logger.debug("alpha it=%d alpha=%.15g mass residual=%.3e", it, alpha, r)
        if r <= mass_tol:
            break
        stalls = stalls + 1 if r >= prev else 0
        if stalls >= STALL_LIMIT:
            logger.warning("alpha fixed point stalled at %.3e; bracketing instead", r)
            alpha, c, extra = _bracket_alpha(
                m, bc, lo, hi, tol, mass_tol, newton_cap, outer_cap
            )
            it += extra
            bracketed = True
            break
        prev = r
        alpha = (1 - RELAXATION) * alpha + RELAXATION * m / weight
    else:
        raise NumericalError(f"alpha did not converge in {outer_cap} iterations", r)

    if not (lo * (1 - 1e-12) <= alpha <= hi * (1 + 1e-12)):
        raise BracketViolation(f"alpha = {alpha!r} left [{lo!r}, {hi!r}]")

    n = CellField(c.mesh, alpha * np.exp(c.values))
    stat = StationaryState(
        alpha=alpha,
        c=c,
        n=n,
        mass_residual=abs(integrate(n) - m),
        elliptic_residual=0.0,
        iterations=it,
        bracketed=bracketed,
    )
    stat = replace(stat, elliptic_residual=stationary_residual(stat, bc))
    logger.info(
        "Stationary state: alpha=%.12g after %d iterations, residual %.3e",
        alpha,
        it,
        stat.elliptic_residual,
    )
    return stat


def _bracket_alpha(m, bc, lo, hi, tol, mass_tol, newton_cap, outer_cap):
    """
    Root of mass_of_alpha(alpha) = m inside the analytic bracket.
    """

    def excess(alpha: float) -> float:
        return mass_of_alpha(alpha, bc, tol, newton_cap) - m

    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo > mass_tol * m or f_hi < -mass_tol * m:
        raise BracketViolation(
            f"mass({lo!r}) - m = {f_lo:.3e} and mass({hi!r}) - m = {f_hi:.3e}"
        )
    iterations = 0
    if abs(f_lo) <= mass_tol * m:
        alpha = lo
    elif abs(f_hi) <= mass_tol * m:
        alpha = hi
    else:
        alpha, result = scipy.optimize.brentq(
            excess,
            lo,
            hi,
            xtol=1e-3 * mass_tol * lo,
            rtol=4 * np.finfo(float).eps,
            maxiter=outer_cap,
            full_output=True,
        )
        if not result.converged:
            raise NumericalError(f"bracketing did not converge: {result.flag}")
        if abs(excess(alpha)) > mass_tol * m:
            raise NumericalError("bracketed alpha misses the mass", abs(excess(alpha)) / m)
        iterations = result.iterations
    c = solve_semilinear(alpha, bc, tol, newton_cap)
    return alpha, c, iterations


def stationary_for(config: RunConfig, bc: BoundaryData, m: float) -> StationaryState:
    """
    Stationary state for a run configuration. For chi != 1 the pair
    (n, chi c) is stationary for saturation chi * gamma at chi = 1, so that
    problem is solved and its signal scaled back.
    """
    chi = config.params.chi
    solver = config.solver
    scaled = bc if chi == 1 else bc.with_gamma(chi * bc.gamma)
    stat = solve_stationary(
        m,
        scaled,
        tol=solver.elliptic_tol,
        mass_tol=solver.mass_tol,
        newton_cap=solver.newton_cap,
        outer_cap=solver.outer_cap,
    )
    if chi == 1:
        return stat
    return replace(stat, c=CellField(bc.mesh, stat.c.values / chi))
