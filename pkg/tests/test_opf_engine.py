import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import math
from types import SimpleNamespace

import numpy as np
import pytest

from src.ac_engine import exact_branch_loss
from src.errors import InconsistentModel, Infeasible
from src.linear_methods import build_method1
from src.matpower_parser import load_case
from src.opf_engine import (
    OpfStatus,
    allocate_losses,
    assemble_opf,
    check_kkt,
    estimate_loss_m6,
    estimate_loss_m7,
    resolve_alpha,
    run_loss_iteration,
    run_method,
    solve_method,
    solve_qp,
)
from src.settings import SolverSettings
from toy_networks import CASE14, three_bus, two_bus


def test_single_generator_serves_the_load():
    net = two_bus(load_mw=50.0, cost=(0.0, 10.0, 0.01))
    solution = run_method(1, net)
    assert solution.status is OpfStatus.OPTIMAL
    assert solution.pg[0] == pytest.approx(0.5, abs=1e-8)
    # 10·50 + 0.01·50² in $/hr
    assert solution.objective == pytest.approx(525.0, rel=1e-8)
    assert solution.branch_flows[0] == pytest.approx(0.5, abs=1e-8)
    assert solution.v_ang[1] == pytest.approx(-0.05, abs=1e-8)


@pytest.mark.parametrize("method", [1, 2, 3, 4])
def test_economic_dispatch_on_lossless_triangle(method):
    # equal marginal cost: 10 + 0.02·P1 = 10 + 0.06·P2 with P1 + P2 = 150 MW
    solution = run_method(method, three_bus())
    np.testing.assert_allclose(solution.pg, [1.125, 0.375], atol=1e-6)
    assert solution.objective == pytest.approx(1668.75, rel=1e-7)


def test_method5_load_bus_balance_carries_voltage_term():
    net = two_bus(load_mw=50.0)
    solution = run_method(5, net)
    # Pg = load·(1 - U2) with U2 driven to ln(v_max)
    assert solution.pg[0] == pytest.approx(0.5 * (1.0 - math.log(1.1)), abs=1e-6)
    assert solution.v_mag[1] == pytest.approx(1.1, abs=1e-6)


def test_case14_method1_structure_and_balance():
    net = load_case(CASE14)
    problem = assemble_opf(build_method1(net), net)
    assert problem.n_balance == 14
    assert problem.qp.n == 14 + 5
    assert len(problem.pinned) == 1

    solution = solve_qp(problem)
    assert solution.total_generation == pytest.approx(net.load_vector().sum(), abs=1e-8)
    residuals = check_kkt(problem, solution)
    settings = SolverSettings()
    assert residuals.within(settings.qp_tolerance, settings.qp_dual_tolerance)


@pytest.mark.parametrize("method", [2, 3, 4, 5])
def test_case14_voltage_methods_respect_bounds(method):
    net = load_case(CASE14)
    solution = run_method(method, net)
    pg_max = np.array([g.p_max for g in net.generators])
    assert np.all(solution.pg <= pg_max + 1e-8)
    assert np.all(solution.pg >= -1e-8)
    assert solution.v_mag[0] == pytest.approx(1.06, abs=1e-8)


def test_not_enough_capacity_is_infeasible():
    net = two_bus(load_mw=250.0, p_max=200.0)
    with pytest.raises(Infeasible) as info:
        run_method(1, net)
    assert info.value.violation == pytest.approx(0.5, abs=1e-6)


def test_model_must_match_network():
    with pytest.raises(InconsistentModel):
        assemble_opf(build_method1(two_bus()), three_bus())
    with pytest.raises(InconsistentModel):
        assemble_opf(build_method1(two_bus()), two_bus(), extra_loads=[0.1])


def test_method6_loss_estimate():
    # r = x = 0.1 gives g = 5
    net = two_bus(r=0.1, x=0.1)
    prev = SimpleNamespace(v_ang=np.array([0.05, 0.0]))
    assert estimate_loss_m6(prev, net)[0] == pytest.approx(0.0125)


def test_method7_loss_estimate():
    net = two_bus(r=0.01938, x=0.05917)
    prev = SimpleNamespace(branch_flows=np.array([1.0]))
    assert estimate_loss_m7(prev, net, alpha=1.05)[0] == pytest.approx(0.02136645, abs=1e-8)
    assert estimate_loss_m7(prev, net)[0] == pytest.approx(0.01938)


def test_loss_allocation_splits():
    net = three_bus()
    losses = np.array([0.02, 0.04, 0.0])
    np.testing.assert_allclose(allocate_losses(net, losses), [0.03, 0.01, 0.02])
    np.testing.assert_allclose(allocate_losses(net, losses, "from"), [0.06, 0.0, 0.0])
    np.testing.assert_allclose(allocate_losses(net, losses, "to"), [0.0, 0.02, 0.04])
    with pytest.raises(ValueError):
        allocate_losses(net, losses, "middle")


def test_alpha_map_matches_either_orientation():
    net = three_bus()
    alpha = resolve_alpha(net, {"3-1": 1.05, "1-2": 1.1})
    np.testing.assert_allclose(alpha, [1.1, 1.05, 1.0])
    with pytest.raises(ValueError):
        resolve_alpha(net, {"1-9": 1.2})
    with pytest.raises(ValueError):
        resolve_alpha(net, {"one-two": 1.2})


@pytest.mark.parametrize("method", [6, 7])
def test_loss_loop_carries_losses(method):
    net = two_bus(r=0.02, x=0.1, load_mw=80.0)
    solution, trace = run_loss_iteration(method, net, iters=4)

    assert solution.method == method
    assert trace.iterations == 4
    assert trace.total_loss(1) == 0.0
    assert trace.dispatch[0][0] == pytest.approx(0.8, abs=1e-8)
    assert trace.total_loss(4) > 0
    # every re-solve balances load plus the fictitious loads
    for dispatch, extra in zip(trace.dispatch, trace.extra_loads):
        assert dispatch.sum() == pytest.approx(0.8 + extra.sum(), abs=1e-8)


def test_loss_loop_on_case14_settles():
    net = load_case(CASE14)
    solution, trace = run_loss_iteration(6, net, iters=4)
    assert solution.total_generation > net.load_vector().sum()
    steps = [abs(trace.total_loss(t) - trace.total_loss(t - 1)) for t in (3, 4)]
    assert steps[1] < steps[0]


def test_loss_loop_tolerance_stop():
    net = two_bus(r=0.02, x=0.1, load_mw=80.0)
    _, trace = run_loss_iteration(6, net, iters=10, tolerance=1e9)
    assert trace.iterations == 1


def test_loss_loop_only_for_methods_6_and_7():
    with pytest.raises(ValueError):
        run_loss_iteration(3, two_bus())
    with pytest.raises(ValueError):
        run_loss_iteration(6, two_bus(), iters=0)


def test_solve_method_dispatches_by_id():
    net = two_bus(r=0.02, x=0.1, load_mw=80.0)
    assert solve_method(1, net).method == 1
    assert solve_method(7, net, iters=2).method == 7


@pytest.mark.parametrize("method", [1, 2, 3, 4])
def test_generation_matches_load_at_optimum(method):
    net = three_bus(load_mw=170.0, r=0.01)
    solution = run_method(method, net)
    assert solution.status is OpfStatus.OPTIMAL
    assert abs(np.sum(solution.pg) - np.sum(net.load_vector())) <= 1e-8


@pytest.mark.parametrize("method", [2, 5])
def test_repeated_runs_are_identical(method):
    net = load_case(CASE14)
    first, second = run_method(method, net), run_method(method, net)
    assert np.array_equal(first.x, second.x)
    assert np.array_equal(first.pg, second.pg)
    assert first.objective == second.objective


def test_dc_loss_estimate_gap_is_fourth_order():
    net = two_bus(r=0.02, x=0.06)
    g = 0.02 / (0.02 ** 2 + 0.06 ** 2)

    def gap(dth):
        estimate = estimate_loss_m6(SimpleNamespace(v_ang=np.array([dth, 0.0])), net)[0]
        exact = exact_branch_loss(g, 0.0, 1.0, 1.0, dth, 0.0)
        assert estimate >= exact
        return estimate - exact

    assert gap(0.2) / gap(0.1) == pytest.approx(16.0, rel=0.02)
    assert gap(0.1) == pytest.approx(g * 0.1 ** 4 / 12, rel=0.01)


@pytest.mark.parametrize("method", [6, 7])
def test_loss_estimates_are_never_negative(method):
    _, trace = run_loss_iteration(method, load_case(CASE14), iters=4)
    assert all(np.all(losses >= 0.0) for losses in trace.losses)
    assert all(np.all(extra >= 0.0) for extra in trace.extra_loads)
