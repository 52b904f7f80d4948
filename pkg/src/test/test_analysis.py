"""
Tests of the energy diagnostics, the trace constant and the convergence
detector.
"""

from dataclasses import replace
import math

import numpy as np
import pytest

from algos import analysis, steady, transport
from util import config, grid
from util.errors import DomainError


def k_inputs(gamma: float, **kwargs) -> analysis.KInputs:
    values = dict(m=1.0, gnorm=1.0, gamma=gamma, lambda1=math.pi**2, c_trace=1.0, volume=1.0)
    values.update(kwargs)
    return analysis.KInputs(**values)


def synthetic(times, energies) -> list[analysis.EnergyReport]:
    return [
        analysis.EnergyReport(
            t=t,
            E_n=e,
            E_grad_c=0.0,
            E_c=0.0,
            lhs36=0.0,
            rhs36=0.0,
            cum_En=0.0,
            mass=1.0,
            min_n=1.0,
            max_n=1.0,
            min_c=0.0,
            max_c=0.0,
        )
        for t, e in zip(times, energies)
    ]


def shortened(path: str, t_end: float, **time):
    run = config.load_config(path)
    return replace(run, time=replace(run.time, t_end=t_end, **time))


def test_K_examples():
    assert analysis.K_of(k_inputs(0.0)) == pytest.approx(math.pi**2 / 2)
    assert analysis.K_of(k_inputs(0.0)) == pytest.approx(4.9348022, abs=1e-7)

    expected = math.pi**2 / 2 - 0.1 * (1.0 + 0.1 * math.exp(0.2) / 2)
    assert analysis.K_of(k_inputs(0.1)) == pytest.approx(expected, rel=1e-14)
    assert analysis.K_of(k_inputs(0.1)) == pytest.approx(4.8286952, abs=1e-6)

    expected = math.pi**2 / 2 - (1.0 + math.exp(2.0) / 2)
    assert analysis.K_of(k_inputs(1.0)) == pytest.approx(expected, rel=1e-14)
    assert analysis.K_of(k_inputs(1.0)) == pytest.approx(0.2402742, abs=1e-6)


def test_K_decreasing_in_gamma():
    rng = np.random.default_rng(6)
    for trial in range(200):
        base = dict(
            m=rng.uniform(0.1, 5),
            gnorm=rng.uniform(0.1, 5),
            lambda1=rng.uniform(0.5, 20),
            c_trace=rng.uniform(0.5, 3),
            volume=rng.uniform(0.5, 4),
        )
        g1, g2 = sorted(rng.uniform(0.01, 3, 2))
        if g1 == g2:
            continue
        assert analysis.K_of(k_inputs(g1, **base)) > analysis.K_of(k_inputs(g2, **base))


def test_K_inputs_are_validated():
    with pytest.raises(DomainError):
        k_inputs(0.1, m=0.0)
    with pytest.raises(DomainError):
        k_inputs(-0.1)


def test_energy_inequality_at_equilibrium():
    mesh = grid.build_mesh("interval", [1.0], [32])
    bc = grid.boundary_data(mesh, 0.5, 1.0)
    stat = steady.solve_stationary(1.0, bc)
    lhs, rhs, holds = analysis.check_energy_inequality(stat.n, stat.c, stat, bc)
    assert lhs == 0.0 and rhs == 0.0 and holds


def test_energy_inequalities_along_a_run():
    run = shortened("datasets/quick.cfg", 0.5)
    mesh, bc = config.build_problem(run)
    records = transport.simulate(run)
    stat = steady.stationary_for(run, bc, records[0].state.mass)
    for r in records:
        lhs, rhs, holds = analysis.check_energy_inequality(r.state.n, r.signal, stat, bc)
        assert holds
        _, weak_rhs, weak_holds = analysis.check_energy_inequality(
            r.state.n, r.signal, stat, bc, weakened=True
        )
        assert weak_rhs >= rhs and weak_holds
        assert analysis.check_energy_35(r.state.n, r.signal, stat, bc)[2]


def test_energy_inequality_with_rescaled_sensitivity():
    run = shortened("datasets/quick.cfg", 0.2)
    run = replace(run, params=replace(run.params, chi=2.0))
    mesh, bc = config.build_problem(run)
    records = transport.simulate(run)
    stat = steady.stationary_for(run, bc, records[0].state.mass)
    for r in records:
        assert analysis.check_energy_inequality(r.state.n, r.signal, stat, bc)[2]
        assert analysis.check_energy_35(r.state.n, r.signal, stat, bc, chi=2.0)[2]


def test_energy_reports():
    run = shortened("datasets/quick.cfg", 0.5)
    mesh, bc = config.build_problem(run)
    records = transport.simulate(run)
    stat = steady.stationary_for(run, bc, records[0].state.mass)
    reports = analysis.energy_reports(records, stat, bc)
    assert len(reports) == len(records)
    assert reports[0].cum_En == 0.0
    assert all(b.cum_En >= a.cum_En for a, b in zip(reports, reports[1:]))
    for rep in reports:
        values = [rep.E_n, rep.E_grad_c, rep.E_c, rep.lhs36, rep.rhs36, rep.cum_En]
        assert all(math.isfinite(v) and v >= 0 for v in values)
        assert rep.lhs36 <= rep.rhs36 * (1 + 1e-8) + 1e-14
    # Squared deviation decays along the run.
    assert reports[-1].E_n < 1e-3 * reports[0].E_n


def test_check_34_trivial_cases():
    reports = synthetic(np.linspace(0, 1, 11), np.zeros(11))
    assert analysis.check_34(reports, 3.0) == (0.0, 0.0, True)
    reports = synthetic(np.linspace(0, 1, 11), np.ones(11))
    assert analysis.check_34(reports, -1.0)[2]


def test_heat_flow_decay_rate():
    # Off-center bump so the first Fourier mode dominates the tail.
    run = config.load_config("datasets/heat.cfg")
    run = replace(
        run,
        init=replace(run.init, amplitude=1.0),
        time=replace(run.time, t_end=2.0, output_every=0.05),
    )
    mesh, bc = config.build_problem(run)
    records = transport.simulate(run)
    stat = steady.stationary_for(run, bc, records[0].state.mass)
    reports = analysis.energy_reports(records, stat, bc)

    converged, rate = analysis.detect_convergence(reports, 0.5)
    assert converged
    assert rate == pytest.approx(-2 * math.pi**2, rel=0.1)

    assert analysis.check_34(reports, math.pi**2 / 2)[2]


def test_detect_convergence_synthetic():
    times = np.linspace(0, 1, 20)
    assert analysis.detect_convergence(synthetic(times, np.zeros(20))) == (True, 0.0)

    converged, _ = analysis.detect_convergence(synthetic(times, np.exp(times)))
    assert not converged

    # Decays but has not yet reached the floor.
    converged, rate = analysis.detect_convergence(synthetic(times, np.exp(-3 * times)))
    assert not converged
    assert rate == pytest.approx(-3.0)

    with pytest.raises(DomainError):
        analysis.detect_convergence(synthetic(times[:5], np.zeros(5)))


def test_detect_convergence_tolerates_roundoff():
    times = np.linspace(0, 1, 20)
    energies = np.exp(-60 * times)
    energies[-1] = energies[-2] + 1e-16
    converged, _ = analysis.detect_convergence(synthetic(times, energies))
    assert converged


def test_decay_rate_ignores_settled_records():
    times = np.linspace(0, 3, 40)
    energies = np.exp(-30 * times)
    energies[times > 1.5] = 0.0
    converged, rate = analysis.detect_convergence(synthetic(times, energies))
    assert converged
    assert rate == pytest.approx(-30.0)


def test_trace_window():
    assert analysis.trace_window(1, 2.0) == 0.5
    assert analysis.trace_window(2, 2.0) == 0.5
    assert analysis.trace_window(2, 1.0) == pytest.approx(0.25)


def test_trace_constant_interval():
    mesh = grid.build_mesh("interval", [1.0], [64])
    c_trace = analysis.estimate_trace_constant(mesh, 2.0, 1 / 3, 200)
    assert c_trace >= math.sqrt(2) - 1e-12
    constant = np.ones(mesh.ncells)
    assert analysis.trace_ratio(mesh, constant, 2.0, 1 / 3) == pytest.approx(math.sqrt(2))

    ratio, holds = analysis.validate_trace_constant(mesh, c_trace, 2.0, 1 / 3, 1000)
    assert holds
    assert ratio <= 1.05

    with pytest.raises(DomainError):
        analysis.estimate_trace_constant(mesh, 2.0, 0.6, 200)


def test_trace_constant_square():
    mesh = grid.build_mesh("rectangle", [1.0, 1.0], [16, 16])
    c_trace = analysis.estimate_trace_constant(mesh, 2.0, 1 / 3, 200)
    assert c_trace >= 2.0 - 1e-12
    constant = np.full(mesh.ncells, 3.0)
    assert analysis.trace_ratio(mesh, constant, 2.0, 1 / 3) == pytest.approx(2.0, rel=1e-14)
    ratio, holds = analysis.validate_trace_constant(mesh, c_trace, 2.0, 1 / 3, 1000)
    assert holds


def test_trace_constant_is_seeded():
    mesh = grid.build_mesh("interval", [1.0], [32])
    first = analysis.estimate_trace_constant(mesh, 1.5, 0.2, 50, seed=7)
    second = analysis.estimate_trace_constant(mesh, 1.5, 0.2, 50, seed=7)
    assert first == second


def test_trace_epsilon_constant():
    c_trace, lam = 1.5, 1 / 3
    eps = 0.25
    delta = eps / (c_trace * (1 - lam))
    expected = c_trace * (1 + lam * delta ** (-(1 - lam) / lam))
    assert analysis.trace_epsilon_constant(c_trace, lam, eps) == pytest.approx(expected)
    # Smaller gradient weight costs a larger L^q weight.
    assert analysis.trace_epsilon_constant(c_trace, lam, 0.1) > analysis.trace_epsilon_constant(
        c_trace, lam, 1.0
    )
    with pytest.raises(DomainError):
        analysis.trace_epsilon_constant(c_trace, 1.5, eps)


def test_poincare():
    for mesh in (
        grid.build_mesh("interval", [1.0], [64]),
        grid.build_mesh("rectangle", [2.0, 1.0], [24, 12]),
    ):
        worst, holds = analysis.check_poincare(mesh)
        assert holds
        # The lowest mode is always sampled and its discrete eigenvalue sits
        # just below the continuum one.
        assert worst >= 1 - 1e-9


def test_chi_rescaling():
    run = shortened("datasets/quick.cfg", 0.2)
    for chi in (1.0, 0.5, 2.0):
        assert analysis.chi_check(run, chi)


def test_boundedness():
    run = shortened("datasets/quick.cfg", 0.5)
    records = transport.simulate(run)
    holds, ratios = analysis.check_boundedness(records)
    assert holds
    assert set(ratios) == {"max_n", "max_c", "max_grad_c"}


def test_dynamics_reach_stationary_state():
    # The acceptance run, shortened: E_n is at roundoff well before T = 5.
    run = shortened("datasets/acceptance.cfg", 5.0)
    mesh, bc = config.build_problem(run)
    records = transport.simulate(run)
    m = records[0].state.mass
    stat = steady.stationary_for(run, bc, m)
    reports = analysis.energy_reports(records, stat, bc)

    assert math.sqrt(reports[-1].E_n) <= 1e-6
    converged, rate = analysis.detect_convergence(reports, 0.5)
    assert converged
    assert rate < -1.0
    assert all(r.lhs36 <= r.rhs36 * (1 + 1e-8) + 1e-14 for r in reports)

    c_trace = analysis.estimate_trace_constant(mesh, 2.0, 1 / 3, 200)
    K = analysis.K_of(analysis.k_inputs_for(bc, m, c_trace))
    assert K > 0
    assert analysis.check_34(reports, K)[2]
