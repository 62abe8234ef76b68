import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest
from pydantic import ValidationError

from src.core_model import BaselineSolution
from src.errors import IncompleteMatrix, NonPositiveAggregate
from src.evaluation import (
    DELTA,
    MetricsReport,
    aggregate_axes,
    approx_error,
    feasibility_check,
    optimality_errors,
    polygon_area,
    price_dispatch,
    scale_axis,
    score_methods,
    time_method,
)
from src.linear_methods import build_method1
from toy_networks import steady_state, two_bus


def baseline(v_mag=(1.0, 1.0), v_ang=(0.0, 0.0), pg=(0.5,), objective=525.0, branch_flow=(0.5,)):
    return BaselineSolution(v_mag=v_mag, v_ang=v_ang, pg=pg, objective=objective, branch_flow=branch_flow)


def cell(method, case="case14", **overrides):
    values = dict(
        method=method, case=case, approx_error=0.01, eps_f=0.01, eps_pg=0.1, eps_v=0.01,
        n_bus=14, n_out=0, n_above=0, n_below=0, out_ratio=0.0, eps_v_out=0.0, wall_time_s=0.5,
    )
    values.update(overrides)
    return MetricsReport(**values)


def test_approx_error_single_branch():
    # DC flow 0.11/0.1 = 1.1 against P* = 1.0
    model = build_method1(two_bus(x=0.1))
    error = approx_error(model, baseline(v_ang=(0.11, 0.0), branch_flow=(1.0,)))
    assert error == pytest.approx(0.09999989, abs=1e-7)


def test_approx_error_zero_at_exact_agreement():
    model = build_method1(two_bus(x=0.1))
    error = approx_error(model, baseline(v_ang=(0.05, 0.0), branch_flow=(0.5,)))
    # only the δ offset remains
    assert error < 1e-6


def test_price_dispatch_in_currency_per_hour():
    assert price_dispatch(two_bus(cost=(0.0, 10.0, 0.01)), [0.5]) == pytest.approx(525.0)


def test_optimality_errors():
    net = two_bus(cost=(0.0, 10.0, 0.01))
    state = steady_state([1.0, 0.99], generator_output=[0.55])
    ref = baseline(v_mag=(1.0, 0.9))
    eps_f, eps_pg, eps_v = optimality_errors(state, net, ref)

    f_k = 10.0 * 55.0 + 0.01 * 55.0 ** 2
    assert eps_f == pytest.approx(abs(f_k - 525.0) / 525.0, rel=1e-6)
    assert eps_pg == pytest.approx(0.1, rel=1e-6)
    assert eps_v == pytest.approx(np.sqrt(((0.99 - 0.9) / 0.9) ** 2 / 2))


def test_optimality_uses_given_objective():
    net = two_bus()
    state = steady_state([1.0, 1.0], generator_output=[0.5])
    eps_f, _, _ = optimality_errors(state, net, baseline(), objective=577.5)
    assert eps_f == pytest.approx(0.1, rel=1e-6)


def test_dispatch_error_is_per_unit():
    net = two_bus()
    state = steady_state([1.0, 1.0], generator_output=[1.0])
    _, eps_pg, _ = optimality_errors(state, net, baseline(pg=(0.5,)))
    assert eps_pg == pytest.approx(1.0, rel=1e-6)


def test_dispatch_error_with_zero_reference_output():
    net = two_bus()
    state = steady_state([1.0, 1.0], generator_output=[0.01])
    _, eps_pg, _ = optimality_errors(state, net, baseline(pg=(0.0,)))
    assert eps_pg == pytest.approx((0.01 - DELTA) / DELTA, rel=1e-9)


def test_feasibility_counts_and_error():
    net = two_bus(v_min=0.94, v_max=1.06)
    state = steady_state([1.0, 1.07])
    result = feasibility_check(state, net, baseline(v_mag=(1.0, 1.05)))
    assert (result.n_out, result.n_above, result.n_below) == (1, 1, 0)
    assert result.eps_v_out == pytest.approx(0.019048, abs=1e-6)


def test_feasibility_limits_are_strict():
    net = two_bus(v_min=0.94, v_max=1.06)
    result = feasibility_check(steady_state([1.06, 0.94]), net, baseline())
    assert result.n_out == 0
    assert result.eps_v_out == 0.0


def test_scale_axis_example():
    scores = scale_axis({1: 0.1, 2: 0.01, 3: 1.0})
    assert scores[1] == pytest.approx(50.5)
    assert scores[2] == pytest.approx(100.0)
    assert scores[3] == pytest.approx(1.0)


def test_scale_axis_without_spread():
    assert scale_axis({1: 0.2, 2: 0.2}) == {1: 100.0, 2: 100.0}


def test_scale_axis_rejects_non_positive():
    with pytest.raises(NonPositiveAggregate):
        scale_axis({1: 0.0, 2: 0.1})


def test_scores_stay_in_range():
    rng = np.random.default_rng(5)
    aggregates = {m: {axis: float(rng.uniform(1e-4, 10.0)) for axis in ("Accuracy", "Speed")} for m in range(1, 8)}
    for per_axis in score_methods(aggregates).values():
        assert all(1.0 - 1e-12 <= s <= 100.0 + 1e-12 for s in per_axis.values())


def test_scores_ignore_the_unit_of_an_axis():
    rng = np.random.default_rng(9)
    axes = ("Accuracy", "Optimality", "Feasibility", "Speed")
    aggregates = {m: {axis: float(rng.uniform(1e-4, 10.0)) for axis in axes} for m in range(1, 8)}
    rescaled = {m: dict(per_axis, Optimality=per_axis["Optimality"] * 7.3) for m, per_axis in aggregates.items()}
    before, after = score_methods(aggregates), score_methods(rescaled)
    for m in aggregates:
        for axis in axes:
            assert after[m][axis] == pytest.approx(before[m][axis], abs=1e-9)


def test_aggregate_borrows_method1_accuracy():
    reports = [
        cell(1, approx_error=0.06),
        cell(6, approx_error=None, eps_f=0.02, n_out=1, n_below=1, out_ratio=1 / 14, eps_v_out=0.01),
    ]
    aggregates = aggregate_axes(reports)
    assert aggregates[6]["Accuracy"] == pytest.approx(0.06)
    assert aggregates[6]["Optimality"] == pytest.approx(0.02 + 0.1 + 0.01)
    assert aggregates[6]["Feasibility"] == pytest.approx(1 / 14 + 0.01)
    assert aggregates[1]["Feasibility"] == DELTA


def test_aggregate_needs_every_cell():
    reports = [cell(1), cell(2), cell(1, case="case57")]
    with pytest.raises(IncompleteMatrix):
        aggregate_axes(reports)


def test_aggregate_rejects_failed_cells():
    reports = [cell(1), cell(2, status="FAILED", error="Infeasible")]
    with pytest.raises(IncompleteMatrix):
        aggregate_axes(reports)


def test_polygon_area():
    assert polygon_area([100.0] * 4) == pytest.approx(20000.0)
    assert polygon_area([1.0, 1.0]) == 0.0


def test_report_counts_must_add_up():
    with pytest.raises(ValidationError):
        cell(1, n_out=2, n_above=1, n_below=0)
    assert cell(1, status="FAILED").failed


def test_timing():
    net = two_bus()
    assert time_method(1, net, repetitions=0) == 0.0
    assert time_method(1, net, repetitions=2) > 0.0
    with pytest.raises(ValueError):
        time_method(1, net, repetitions=-1)


def test_loss_methods_time_the_whole_loop():
    net = two_bus(r=0.02)
    assert time_method(6, net, repetitions=1, iters=2) > 0.0
