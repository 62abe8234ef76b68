import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import json

import numpy as np
import pytest

from src.ac_engine import solve_power_flow
from src.baseline_io import (
    BaselineDocument,
    balance_residual,
    baseline_document,
    baseline_from_state,
    dump_baseline,
    load_baseline,
    parse_baseline,
)
from src.errors import BaselineMismatch
from src.evaluation import price_dispatch
from src.matpower_parser import load_case
from toy_networks import CASE14, two_bus


@pytest.fixture
def case14_baseline():
    net = load_case(CASE14)
    state = solve_power_flow(net, [g.p_gen for g in net.generators])
    return net, baseline_from_state(net, state, price_dispatch(net, state.generator_output))


def test_converged_state_balances(case14_baseline):
    net, baseline = case14_baseline
    assert balance_residual(net, baseline) <= 1e-6


def test_dump_and_load(tmp_path, case14_baseline):
    net, baseline = case14_baseline
    path = tmp_path / "case14_baseline.json"
    dump_baseline(net, baseline, path)

    doc = json.loads(path.read_text())
    assert doc["case"] == "case14"
    assert len(doc["bus"]) == 14 and len(doc["gen"]) == 5 and len(doc["branch"]) == 20

    loaded = load_baseline(path, net)
    np.testing.assert_allclose(loaded.v_mag, baseline.v_mag, atol=1e-12)
    np.testing.assert_allclose(loaded.v_ang, baseline.v_ang, atol=1e-12)
    np.testing.assert_allclose(loaded.pg, baseline.pg, atol=1e-12)
    np.testing.assert_allclose(loaded.branch_flow, baseline.branch_flow, atol=1e-12)
    assert loaded.objective == pytest.approx(baseline.objective)


def test_buses_are_matched_by_id(case14_baseline):
    net, baseline = case14_baseline
    doc = baseline_document(net, baseline)
    doc = doc.model_copy(update={"bus": list(reversed(doc.bus))})
    loaded = parse_baseline(doc, net)
    np.testing.assert_allclose(loaded.v_mag, baseline.v_mag, atol=1e-12)


def test_unbalanced_state_rejected(case14_baseline):
    net, baseline = case14_baseline
    doc = baseline_document(net, baseline)
    doc.bus[4][1] += 0.05
    with pytest.raises(BaselineMismatch, match="AC balance"):
        parse_baseline(doc, net)


def test_size_mismatch_rejected(case14_baseline):
    net, baseline = case14_baseline
    doc = baseline_document(net, baseline)
    doc = doc.model_copy(update={"branch": doc.branch[:-1]})
    with pytest.raises(BaselineMismatch):
        parse_baseline(doc, net)


def test_generator_order_checked(case14_baseline):
    net, baseline = case14_baseline
    doc = baseline_document(net, baseline)
    doc.gen[0][0], doc.gen[1][0] = doc.gen[1][0], doc.gen[0][0]
    with pytest.raises(BaselineMismatch, match="generator 1"):
        parse_baseline(doc, net)


def test_missing_bus_rejected():
    net = two_bus()
    doc = BaselineDocument(objective=525.0, bus=[[1, 1.0, 0.0], [7, 1.0, 0.0]],
                           gen=[[1, 50.0]], branch=[[1, 2, 50.0]])
    with pytest.raises(BaselineMismatch, match="lacks buses"):
        parse_baseline(doc, net)


def test_missing_file():
    with pytest.raises(FileNotFoundError, match="baseline not found"):
        load_baseline("no/such/baseline.json", two_bus())
