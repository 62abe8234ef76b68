"""
Brute-force OPF oracle for tiny networks.

Walks a regular grid over the dispatchable generators' output boxes, prices
each point after an AC power flow and keeps the cheapest feasible one. It
stands in for an external AC-OPF baseline at desk scale.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from src.ac_engine import SteadyState, solve_power_flow
from src.baseline_io import baseline_from_state
from src.core_model import BaselineSolution, Network, to_per_unit
from src.errors import NoFeasiblePoint, NonConvergence, SingularJacobian
from src.evaluation import price_dispatch
from src.settings import SolverSettings

logger = logging.getLogger(__name__)

MAX_BUSES = 3
MAX_DISPATCHABLE = 2
FEASIBILITY_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class OracleResult:
    dispatch: np.ndarray
    objective: float
    cell_variation: float
    baseline: BaselineSolution
    points_evaluated: int
    points_feasible: int


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(np.floor((hi - lo) / step + 1e-9))
    points = lo + step * np.arange(n + 1)
    if hi - points[-1] > 1e-12:
        points = np.r_[points, hi]
    return points


def _feasible(net: Network, state: SteadyState, slack_units) -> bool:
    for k in slack_units:
        g = net.generators[k]
        p = state.generator_output[k]
        if p < g.p_min - FEASIBILITY_SLACK or p > g.p_max + FEASIBILITY_SLACK:
            return False
    v_min = np.array([b.v_min for b in net.buses])
    v_max = np.array([b.v_max for b in net.buses])
    return bool(np.all(state.v_mag >= v_min - FEASIBILITY_SLACK) and np.all(state.v_mag <= v_max + FEASIBILITY_SLACK))


def brute_force_opf_oracle(
    net: Network,
    grid_step: float = 1e-3,
    settings: Optional[SolverSettings] = None,
) -> OracleResult:
    """
    Exhaustive grid search. Slack-bus units absorb the balance and losses;
    points whose slack output or voltages leave their limits, or whose
    power flow fails, are skipped.
    """
    net = to_per_unit(net)
    if grid_step <= 0:
        raise ValueError(f"grid_step must be positive, got {grid_step}")
    if net.n_bus > MAX_BUSES:
        raise ValueError(f"oracle handles at most {MAX_BUSES} buses, '{net.name}' has {net.n_bus}")

    slack = net.slack_position
    slack_units = net.generators_at(slack)
    dispatchable = [k for k in range(net.n_gen) if k not in slack_units]
    if len(dispatchable) > MAX_DISPATCHABLE:
        raise ValueError(
            f"oracle handles at most {MAX_DISPATCHABLE} dispatchable generators besides the slack, "
            f"got {len(dispatchable)}"
        )

    axes = [_grid(net.generators[k].p_min, net.generators[k].p_max, grid_step) for k in dispatchable]
    logger.info(f"oracle on '{net.name}': {int(np.prod([len(a) for a in axes]))} grid points")

    costs: Dict[Tuple[int, ...], float] = {}
    best_key, best_state = None, None
    evaluated = 0
    for key in itertools.product(*(range(len(a)) for a in axes)):
        evaluated += 1
        dispatch = np.zeros(net.n_gen)
        for axis, (k, idx) in enumerate(zip(dispatchable, key)):
            dispatch[k] = axes[axis][idx]
        try:
            state = solve_power_flow(net, dispatch, settings=settings)
        except (NonConvergence, SingularJacobian):
            continue
        if not _feasible(net, state, slack_units):
            continue
        cost = price_dispatch(net, state.generator_output)
        costs[key] = cost
        if best_key is None or cost < costs[best_key]:
            best_key, best_state = key, state

    if best_key is None:
        raise NoFeasiblePoint(f"no feasible grid point for '{net.name}' at step {grid_step}")

    # Largest objective change to a feasible neighbouring grid point.
    variation = 0.0
    for axis in range(len(best_key)):
        for offset in (-1, 1):
            neighbour = list(best_key)
            neighbour[axis] += offset
            cost = costs.get(tuple(neighbour))
            if cost is not None:
                variation = max(variation, abs(cost - costs[best_key]))

    objective = costs[best_key]
    logger.info(
        f"oracle optimum {objective:.6f} after {evaluated} points ({len(costs)} feasible), "
        f"cell variation {variation:.3e}"
    )
    return OracleResult(
        dispatch=best_state.generator_output.copy(),
        objective=objective,
        cell_variation=variation,
        baseline=baseline_from_state(net, best_state, objective),
        points_evaluated=evaluated,
        points_feasible=len(costs),
    )
