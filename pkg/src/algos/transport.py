"""
Conservative explicit finite-volume transport of the cell density,

    n_t = div(grad n - chi n grad c),   (grad n - chi n grad c) . nu = 0,

coupled to the elliptic signal equation, which is re-solved from the current
density before every step.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Callable

import numpy as np

from algos import signal as signal_solver
from algos.signal import SignalSolution
from util import profile
from util.config import RunConfig, build_problem
from util.errors import DomainError, NumericalError, StabilityError
from util.grid import BoundaryData, CellField, Mesh, face_gradient, integrate
from util.initial import initial_density

logger = logging.getLogger(__name__)

SAFETY = 0.9
"""
Fraction of the convex-combination bound used as time step
"""


@dataclass(frozen=True, eq=False)
class TransportState:
    t: float
    """
    Time
    """
    n: CellField
    """
    Cell density
    """
    mass: float
    """
    integrate(n)
    """


@dataclass(frozen=True)
class StepReport:
    dt: float
    """
    Step that produced this state (0 for the initial state)
    """
    mass: float
    min_n: float
    max_n: float
    max_drift: float
    """
    max |chi grad c| over interior faces
    """


@dataclass(frozen=True, eq=False)
class Record:
    state: TransportState
    signal: SignalSolution
    report: StepReport

    @property
    def t(self) -> float:
        return self.state.t


def upwind_flux(n_left, n_right, u, h):
    """
    Centered diffusion plus first-order upwind advection of n.
    """
    return -(n_right - n_left) / h + np.where(u > 0, n_left, n_right) * u


def bernoulli(x: np.ndarray) -> np.ndarray:
    """
    B(x) = x / (exp(x) - 1), with B(0) = 1.
    """
    small = np.abs(x) < 1e-10
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, safe / np.expm1(safe))


def exponential_flux(n_left, n_right, u, h):
    """
    Exponentially fitted (Scharfetter-Gummel) flux. Vanishes exactly when
    n_right / n_left = exp(h u), so discrete equilibria are alpha exp(chi c).
    """
    delta = h * u
    return (bernoulli(-delta) * n_left - bernoulli(delta) * n_right) / h


flux_schemes: dict[str, Callable] = {
    "exponential": exponential_flux,
    "upwind": upwind_flux,
}
"""
Face flux discretizations of the diffusion + chemotaxis flux, left to right.
"""


def drift(c: SignalSolution | CellField, chi: float) -> np.ndarray:
    """
    Drift velocity chi grad c on every interior face.
    """
    field = c.c if isinstance(c, SignalSolution) else c
    return chi * face_gradient(field)


def stable_dt(mesh: Mesh, drift: np.ndarray) -> float:
    """
    Largest step for which the explicit update is a convex combination of
    old cell values, times SAFETY.

    Args:
        mesh: The mesh.
        drift: Drift velocity per interior face.
    """
    umax = float(np.max(np.abs(drift))) if drift.size else 0.0
    if not math.isfinite(umax):
        raise NumericalError("drift velocity is not finite")
    denom = sum(2.0 / h**2 + 2.0 * umax / h for h in mesh.spacing)
    return SAFETY / denom


@profile.timer("transport.advance")
def advance(
    state: TransportState,
    c: SignalSolution,
    dt: float,
    chi: float = 1.0,
    flux: str = "exponential",
) -> TransportState:
    """
    One explicit Euler step in flux form. Boundary faces carry no flux, so
    the mass telescopes.

    Args:
        state: The current state.
        c: Signal solved from state.n.
        dt: Time step, at most stable_dt.
        chi: Chemotactic sensitivity.
        flux: Key of flux_schemes.

    Raises: StabilityError if dt exceeds stable_dt.
    """
    mesh = state.n.mesh
    if chi <= 0:
        raise DomainError(f"chi must be > 0, got {chi}")
    if dt < 0 or not math.isfinite(dt):
        raise NumericalError(f"invalid time step {dt}")

    u = drift(c, chi)
    limit = stable_dt(mesh, u)
    if dt > limit * (1 + 1e-12):
        raise StabilityError(f"dt = {dt:.6g} exceeds stable_dt = {limit:.6g}")

    n = state.n.values
    left, right = mesh.interior_left, mesh.interior_right
    F = flux_schemes[flux](n[left], n[right], u, mesh.interior_spacing)
    F = F * mesh.interior_measure
    net = np.bincount(left, weights=F, minlength=mesh.ncells) - np.bincount(
        right, weights=F, minlength=mesh.ncells
    )
    n_new = n - (dt / mesh.cell_volume) * net
    if not np.all(np.isfinite(n_new)):
        raise NumericalError("density became non-finite")

    field = CellField(mesh, n_new)
    return TransportState(state.t + dt, field, integrate(field))


def _report(state: TransportState, c: SignalSolution, dt: float, chi: float) -> StepReport:
    u = drift(c, chi)
    return StepReport(
        dt=dt,
        mass=state.mass,
        min_n=state.n.min(),
        max_n=state.n.max(),
        max_drift=float(np.max(np.abs(u))) if u.size else 0.0,
    )


@profile.timer("transport.evolve")
def evolve(
    n0: CellField,
    bc: BoundaryData,
    t_end: float,
    output_every: float | None = None,
    dt_cap: float | None = None,
    chi: float = 1.0,
    tol: float = signal_solver.DEFAULT_TOL,
    method: str = "direct",
    flux: str = "exponential",
) -> list[Record]:
    """
    Integrate the coupled system from n0 up to t_end.

    Args:
        n0: Initial density, > 0 everywhere.
        bc: Boundary data.
        t_end: Final time.
        output_every: Output interval; None records only t = 0 and t_end.
        dt_cap: Optional upper bound on the time step.
        chi: Chemotactic sensitivity.
        tol: Signal solver tolerance.
        method: Signal linear solver.
        flux: Flux scheme.

    Returns: Records at t = 0, every output time and t_end. Steps are
             shortened to land exactly on output times.
    """
    if n0.min() <= 0:
        raise DomainError("initial density must be > 0 everywhere (n0 > 0)")
    if t_end < 0:
        raise DomainError(f"t_end must be >= 0, got {t_end}")

    mesh = n0.mesh
    state = TransportState(0.0, n0, integrate(n0))
    c = signal_solver.solve_signal(state.n, bc, tol, method)
    records = [Record(state, c, _report(state, c, 0.0, chi))]

    k = 1
    steps = 0
    while state.t < t_end:
        target = t_end
        if output_every is not None and k * output_every < t_end * (1 - 1e-12):
            target = k * output_every

        dt = stable_dt(mesh, drift(c, chi))
        if dt_cap is not None:
            dt = min(dt, dt_cap)
        landed = state.t + dt >= target
        if landed:
            dt = target - state.t

        state = advance(state, c, dt, chi, flux)
        if landed:
            state = TransportState(target, state.n, state.mass)
        c = signal_solver.solve_signal(state.n, bc, tol, method)
        steps += 1

        if landed:
            records.append(Record(state, c, _report(state, c, dt, chi)))
            logger.debug(
                "t=%.6g mass=%.15g min_n=%.6g max_n=%.6g",
                state.t,
                state.mass,
                state.n.min(),
                state.n.max(),
            )
            k += 1

    logger.info("Integrated to t=%g in %d steps, %d records", t_end, steps, len(records))
    return records


def simulate(config: RunConfig) -> list[Record]:
    """
    Run the configured simulation.
    """
    mesh, bc = build_problem(config)
    n0 = initial_density(mesh, config.init)
    return evolve(
        n0,
        bc,
        t_end=config.time.t_end,
        output_every=config.time.output_every,
        dt_cap=config.time.dt_cap,
        chi=config.params.chi,
        tol=config.solver.elliptic_tol,
        method=config.solver.linear_solver,
        flux=config.solver.flux,
    )
