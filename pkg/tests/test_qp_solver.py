import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest
import scipy.sparse as sp

from src.errors import Infeasible, IterLimit, NonConvex
from src.qp_solver import QuadraticProgram, kkt_residuals, phase_one_violation, solve_qp
from src.settings import SolverSettings

INF = np.inf


def qp(hessian, linear, eq_matrix, eq_rhs, lower, upper, constant=0.0):
    return QuadraticProgram(
        hessian=sp.csr_matrix(np.atleast_2d(np.asarray(hessian, dtype=float))),
        linear=np.asarray(linear, dtype=float),
        eq_matrix=sp.csr_matrix(np.asarray(eq_matrix, dtype=float).reshape(-1, len(linear))),
        eq_rhs=np.asarray(eq_rhs, dtype=float),
        lower=np.asarray(lower, dtype=float),
        upper=np.asarray(upper, dtype=float),
        constant=constant,
    )


def test_equality_constrained_minimum():
    problem = qp(np.diag([2.0, 2.0]), [0.0, 0.0], [[1.0, 1.0]], [1.0], [-INF, -INF], [INF, INF])
    result = solve_qp(problem)
    np.testing.assert_allclose(result.x, [0.5, 0.5], atol=1e-8)
    assert result.objective == pytest.approx(0.5)
    assert result.eq_dual[0] == pytest.approx(-1.0, abs=1e-6)


def test_active_upper_bound():
    # min (x - 2)² over 0 <= x <= 1
    problem = qp([[2.0]], [-4.0], np.zeros((0, 1)), [], [0.0], [1.0], constant=4.0)
    result = solve_qp(problem)
    assert result.x[0] == pytest.approx(1.0, abs=1e-6)
    assert result.objective == pytest.approx(1.0, abs=1e-6)
    assert result.upper_dual[0] == pytest.approx(2.0, abs=1e-5)
    assert result.lower_dual[0] == pytest.approx(0.0, abs=1e-5)


def test_result_satisfies_kkt():
    rng = np.random.default_rng(3)
    n, m = 8, 3
    root = rng.normal(size=(n, n))
    hessian = root @ root.T + np.eye(n)
    a = rng.normal(size=(m, n))
    x0 = rng.uniform(-0.5, 0.5, n)
    problem = qp(hessian, rng.normal(size=n), a, a @ x0, -np.ones(n), np.ones(n))

    settings = SolverSettings()
    result = solve_qp(problem, settings)
    assert result.residuals.within(settings.qp_tolerance, settings.qp_dual_tolerance)
    again = kkt_residuals(problem, result.x, result.eq_dual, result.lower_dual, result.upper_dual)
    assert again == result.residuals


def test_fixed_variable_is_held():
    problem = qp(np.diag([2.0, 2.0]), [0.0, 0.0], [[1.0, 1.0]], [1.0], [0.3, -INF], [0.3, INF])
    result = solve_qp(problem)
    np.testing.assert_allclose(result.x, [0.3, 0.7], atol=1e-9)
    # x1 would rather sit at 0.5, so the upper side of the pin binds
    assert result.upper_dual[0] > 0
    assert result.lower_dual[0] == 0


def test_linear_objective_with_bounds():
    problem = qp(np.zeros((2, 2)), [1.0, 2.0], [[1.0, 1.0]], [1.5], [0.0, 0.0], [1.0, 1.0])
    result = solve_qp(problem)
    np.testing.assert_allclose(result.x, [1.0, 0.5], atol=1e-6)


def test_inconsistent_constraints_are_infeasible():
    problem = qp(np.diag([1.0, 1.0]), [0.0, 0.0], [[1.0, 1.0]], [3.0], [0.0, 0.0], [1.0, 1.0])
    assert phase_one_violation(problem) == pytest.approx(1.0)
    with pytest.raises(Infeasible) as info:
        solve_qp(problem)
    assert info.value.violation == pytest.approx(1.0, abs=1e-6)
    assert info.value.solution is not None


def test_crossed_bounds_are_infeasible():
    problem = qp([[1.0]], [0.0], np.zeros((0, 1)), [], [1.0], [0.0])
    with pytest.raises(Infeasible):
        solve_qp(problem)


def test_negative_curvature_rejected():
    problem = qp([[-1.0]], [0.0], np.zeros((0, 1)), [], [0.0], [1.0])
    with pytest.raises(NonConvex):
        solve_qp(problem)


def test_indefinite_coupling_rejected():
    problem = qp([[1.0, 2.0], [2.0, 1.0]], [0.0, 0.0], np.zeros((0, 2)), [], [-1.0, -1.0], [1.0, 1.0])
    with pytest.raises(NonConvex):
        solve_qp(problem)


def test_iteration_cap():
    problem = qp([[2.0]], [-4.0], np.zeros((0, 1)), [], [0.0], [1.0])
    with pytest.raises(IterLimit) as info:
        solve_qp(problem, SolverSettings(qp_max_iterations=1))
    assert info.value.solution.iterations == 1


def test_residuals_flag_negative_multipliers():
    problem = qp([[2.0]], [-4.0], np.zeros((0, 1)), [], [0.0], [1.0])
    residuals = kkt_residuals(problem, np.array([1.0]), np.zeros(0), np.array([-0.5]), np.array([1.5]))
    assert residuals.complementarity == pytest.approx(0.5)
    assert residuals.stationarity == pytest.approx(0.0)
