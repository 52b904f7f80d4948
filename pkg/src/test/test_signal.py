"""
Tests of the elliptic signal solver.
"""

import math

import numpy as np
import pytest

from algos import signal
from util import grid
from util.errors import DegenerateProblemError, DomainError


def cosh_oracle(x: np.ndarray) -> np.ndarray:
    """
    c'' = 4c on (0, 1) with c' = (1 - c) on the boundary.
    """
    A = 1 / (2 * math.sinh(1) + math.cosh(1))
    return A * np.cosh(2 * (x - 0.5))


def interval_problem(cells: int, gamma: float = 1.0, g: float = 1.0):
    mesh = grid.build_mesh("interval", [1.0], [cells])
    return mesh, grid.boundary_data(mesh, gamma, g)


def test_zero_density_gives_saturation():
    mesh, bc = interval_problem(16, gamma=0.7)
    sol = signal.solve_signal(grid.CellField.constant(mesh, 0.0), bc)
    assert np.allclose(sol.c.values, 0.7, rtol=0, atol=1e-14)
    assert np.allclose(sol.c_b, 0.7, rtol=0, atol=1e-14)
    assert sol.residual <= 1e-12


def test_no_exchange_gives_zero():
    mesh, bc = interval_problem(16, gamma=0.7, g=0.0)
    sol = signal.solve_signal(grid.CellField.constant(mesh, 1.0), bc)
    assert np.allclose(sol.c.values, 0.0, atol=1e-14)


def test_degenerate_and_invalid_input():
    mesh, bc = interval_problem(8, g=0.0)
    with pytest.raises(DegenerateProblemError):
        signal.solve_signal(grid.CellField.constant(mesh, 0.0), bc)

    mesh, bc = interval_problem(8)
    n = np.ones(mesh.ncells)
    n[3] = -1.0
    with pytest.raises(DomainError):
        signal.solve_signal(grid.CellField(mesh, n), bc)
    with pytest.raises(DomainError):
        signal.solve_signal(grid.CellField.constant(mesh, 1.0), bc, tol=0.0)


def test_cosh_oracle_values():
    assert cosh_oracle(np.array([0.5]))[0] == pytest.approx(0.25684, abs=1e-5)
    assert cosh_oracle(np.array([0.0]))[0] == pytest.approx(0.39632, abs=1e-5)


def test_second_order_convergence():
    errors = []
    for cells in (16, 32, 64, 128):
        mesh, bc = interval_problem(cells)
        sol = signal.solve_signal(grid.CellField.constant(mesh, 4.0), bc)
        x = grid.cell_centers(mesh)[:, 0]
        errors.append(float(np.max(np.abs(sol.c.values - cosh_oracle(x)))))
    for coarse, fine in zip(errors, errors[1:]):
        assert fine / coarse <= 0.3


def test_face_values_approach_oracle():
    mesh, bc = interval_problem(128)
    sol = signal.solve_signal(grid.CellField.constant(mesh, 4.0), bc)
    assert sol.c_b[0] == pytest.approx(0.39632, abs=1e-4)
    assert sol.c_b[1] == pytest.approx(0.39632, abs=1e-4)


def test_pcg_matches_direct():
    rng = np.random.default_rng(1)
    for kind, lengths, cells in (
        ("interval", [1.0], [64]),
        ("rectangle", [1.0, 2.0], [12, 20]),
    ):
        mesh = grid.build_mesh(kind, lengths, cells)
        bc = grid.boundary_data(mesh, 0.8, 1.5)
        n = grid.CellField(mesh, rng.uniform(0.0, 5.0, mesh.ncells))
        direct = signal.solve_signal(n, bc, method="direct")
        pcg = signal.solve_signal(n, bc, method="pcg")
        assert np.allclose(direct.c.values, pcg.c.values, rtol=0, atol=1e-11)


def test_residual_of_exact_solution():
    mesh, bc = interval_problem(8, gamma=0.3)
    zero = grid.CellField.constant(mesh, 0.0)
    saturated = grid.CellField.constant(mesh, 0.3)
    assert signal.signal_residual(saturated, zero, bc) <= 1e-15


def test_residual_detects_perturbation():
    mesh, bc = interval_problem(4)
    n = grid.CellField.constant(mesh, 4.0)
    sol = signal.solve_signal(n, bc)
    assert signal.signal_residual(sol, n, bc) <= 1e-12

    perturbed = sol.c.values.copy()
    perturbed[1] += 1.0
    assert signal.signal_residual(grid.CellField(mesh, perturbed), n, bc) >= 4.0


def test_maximum_principle():
    rng = np.random.default_rng(2)
    for trial in range(20):
        cells = int(rng.integers(4, 40))
        gamma = float(rng.uniform(0.05, 2.0))
        mesh = grid.build_mesh("interval", [float(rng.uniform(0.5, 3.0))], [cells])
        bc = grid.boundary_data(mesh, gamma, float(rng.uniform(0.1, 5.0)))
        n = grid.CellField(mesh, rng.uniform(0.0, 10.0, cells))
        sol = signal.solve_signal(n, bc)
        assert sol.c.min() >= 0
        assert max(sol.c.max(), float(np.max(sol.c_b))) <= gamma + 1e-12
        # Strictly below saturation when cells consume and every face exchanges.
        assert sol.c.max() < gamma


def test_maximum_principle_square():
    rng = np.random.default_rng(3)
    mesh = grid.build_mesh("rectangle", [1.0, 1.0], [16, 16])
    bc = grid.boundary_data(mesh, 0.5, 1.0, {"bottom": 0.0})
    n = grid.CellField(mesh, rng.uniform(0.0, 3.0, mesh.ncells))
    sol = signal.solve_signal(n, bc)
    assert sol.c.min() >= 0
    assert float(np.max(sol.c_b)) <= 0.5 + 1e-12
    assert sol.c.max() < 0.5


def test_monotone_in_density():
    rng = np.random.default_rng(4)
    mesh, bc = interval_problem(32, gamma=1.0, g=2.0)
    for trial in range(20):
        n2 = rng.uniform(0.0, 5.0, mesh.ncells)
        n1 = n2 + rng.uniform(0.0, 2.0, mesh.ncells)
        c1 = signal.solve_signal(grid.CellField(mesh, n1), bc).c.values
        c2 = signal.solve_signal(grid.CellField(mesh, n2), bc).c.values
        assert np.all(c1 <= c2 + 1e-14)


def test_linear_in_saturation():
    mesh = grid.build_mesh("interval", [1.0], [32])
    bc = grid.boundary_data(mesh, 0.25, 1.0)
    n = grid.CellField(mesh, np.linspace(0.5, 2.0, mesh.ncells))
    c = signal.solve_signal(n, bc).c.values
    doubled = signal.solve_signal(n, bc.with_gamma(0.5)).c.values
    assert np.array_equal(2.0 * c, doubled)


def test_meshes_built_separately_are_interchangeable():
    mesh = grid.build_mesh("interval", [1.0], [16])
    bc = grid.boundary_data(grid.build_mesh("interval", [1.0], [16]), 0.5, 1.0)
    n = grid.CellField.constant(mesh, 2.0)
    sol = signal.solve_signal(n, bc)
    assert signal.signal_residual(sol, n, bc) <= 1e-12

    other = grid.build_mesh("interval", [1.0], [32])
    with pytest.raises(ValueError):
        signal.solve_signal(grid.CellField.constant(other, 2.0), bc)
