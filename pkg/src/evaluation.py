"""
Evaluation

Accuracy, optimality, feasibility and speed metrics for one (method, case)
pair, and the logarithmic 1-100 scoring that turns per-method aggregates into
radar-chart spokes.
"""

import logging
import math
import time
from typing import Dict, Iterable, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from src.ac_engine import SteadyState
from src.core_model import BaselineSolution, Network, to_per_unit
from src.errors import IncompleteMatrix, NonPositiveAggregate
from src.linear_methods import LinearFlowModel, evaluate_flow
from src.opf_engine import solve_method
from src.settings import SolverSettings

logger = logging.getLogger(__name__)

# Guard against zero denominators in the relative error formulas.
DELTA = 1e-7

AXES = ("Accuracy", "Optimality", "Feasibility", "Speed")


class MetricsReport(BaseModel):
    """All metrics of one (method, case) cell. Missing values are None."""
    method: int = Field(ge=1, le=7)
    case: str
    approx_error: Optional[float] = Field(None, ge=0)
    eps_f: Optional[float] = Field(None, ge=0)
    eps_pg: Optional[float] = Field(None, ge=0)
    eps_v: Optional[float] = Field(None, ge=0)
    n_bus: int = Field(0, ge=0)
    n_out: Optional[int] = Field(None, ge=0)
    n_above: Optional[int] = Field(None, ge=0)
    n_below: Optional[int] = Field(None, ge=0)
    out_ratio: Optional[float] = Field(None, ge=0, le=1)
    eps_v_out: Optional[float] = Field(None, ge=0)
    wall_time_s: Optional[float] = Field(None, ge=0)
    pf_iterations: Optional[int] = None
    status: str = "OK"
    error: Optional[str] = None

    @model_validator(mode="after")
    def _counts_add_up(self):
        if None not in (self.n_out, self.n_above, self.n_below):
            if self.n_out != self.n_above + self.n_below:
                raise ValueError(
                    f"n_out {self.n_out} != n_above {self.n_above} + n_below {self.n_below}"
                )
        return self

    @property
    def failed(self) -> bool:
        return self.status != "OK"


class FeasibilityResult(NamedTuple):
    n_out: int
    n_above: int
    n_below: int
    eps_v_out: float


def _rms(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(values * values)))


def approx_error(model: LinearFlowModel, baseline: BaselineSolution) -> float:
    """
    Root of the mean, over all branches, of the squared relative deviation
    (P^k(V*, θ*) - P* - δ)/(P* + δ).
    """
    flows = evaluate_flow(model, baseline.v_mag, baseline.v_ang)
    reference = baseline.branch_flow
    if flows.shape != reference.shape:
        raise ValueError(f"baseline has {reference.size} branch flows, model has {flows.size}")
    return _rms((flows - reference - DELTA) / (reference + DELTA))


def price_dispatch(net: Network, pg: Sequence[float]) -> float:
    """Generation cost in currency/hr of a per-unit dispatch."""
    net = to_per_unit(net)
    pg = np.asarray(pg, dtype=float)
    return float(sum(g.cost.evaluate(p * net.base_mva) for g, p in zip(net.generators, pg)))


def optimality_errors(
    state: SteadyState,
    net: Network,
    baseline: BaselineSolution,
    objective: Optional[float] = None,
) -> Tuple[float, float, float]:
    """
    (ε_f, ε_Pg, ε_V) of a validated steady state.

    f^k is the cost of the realized dispatch, slack pickup included, unless
    `objective` is passed. Costs compare in currency/hr, dispatch in per-unit,
    so δ guards a zero reference output at the per-unit scale.
    """
    net = to_per_unit(net)
    f_k = price_dispatch(net, state.generator_output) if objective is None else objective
    f_ref = baseline.objective
    eps_f = abs(f_k - (f_ref + DELTA)) / (f_ref + DELTA)

    pg = np.asarray(state.generator_output, dtype=float)
    eps_pg = _rms((pg - (baseline.pg + DELTA)) / (baseline.pg + DELTA))

    eps_v = _rms((state.v_mag - baseline.v_mag) / baseline.v_mag)
    return float(eps_f), eps_pg, eps_v


def feasibility_check(state: SteadyState, net: Network, baseline: BaselineSolution) -> FeasibilityResult:
    """Voltage limit violations (strict) and their RMS relative error against V*."""
    v_max = np.array([bus.v_max for bus in net.buses], dtype=float)
    v_min = np.array([bus.v_min for bus in net.buses], dtype=float)
    above = state.v_mag > v_max
    below = state.v_mag < v_min
    out = above | below
    n_out = int(out.sum())
    if n_out == 0:
        return FeasibilityResult(0, 0, 0, 0.0)
    rel = (state.v_mag[out] - baseline.v_mag[out]) / baseline.v_mag[out]
    return FeasibilityResult(n_out, int(above.sum()), int(below.sum()), _rms(rel))


def time_method(
    method_id: int,
    net: Network,
    repetitions: int = 100,
    settings: Optional[SolverSettings] = None,
    **method_options,
) -> float:
    """
    Wall-clock seconds for `repetitions` complete runs (model build and
    solve, the whole loop for methods 6-7) after one untimed warm-up run.
    """
    if repetitions < 0:
        raise ValueError(f"repetitions must be non-negative, got {repetitions}")
    if repetitions == 0:
        return 0.0
    net = to_per_unit(net)
    solve_method(method_id, net, settings, **method_options)

    start = time.perf_counter()
    for _ in range(repetitions):
        solve_method(method_id, net, settings, **method_options)
    elapsed = time.perf_counter() - start
    logger.debug(f"method {method_id} on '{net.name}': {repetitions} runs in {elapsed:.4f} s")
    return elapsed


def scale_axis(values: Mapping[int, float]) -> Dict[int, float]:
    """
    s_m = ln(1/v_m), then 1 + 99(s_m - min s)/(max s - min s).
    Every method gets 100 when all s coincide.
    """
    for method, v in values.items():
        if not (v > 0 and math.isfinite(v)):
            raise NonPositiveAggregate(f"method {method}: aggregate must be positive and finite, got {v}")
    logs = {m: math.log(1.0 / v) for m, v in values.items()}
    if not logs:
        return {}
    lo, hi = min(logs.values()), max(logs.values())
    spread = hi - lo
    if spread <= 0.0:
        return {m: 100.0 for m in logs}
    return {m: 1.0 + 99.0 * (s - lo) / spread for m, s in logs.items()}


def score_methods(aggregates: Mapping[int, Mapping[str, float]]) -> Dict[int, Dict[str, float]]:
    """Per-method, per-axis aggregates in; per-method, per-axis 1-100 scores out."""
    axes = sorted({axis for per_method in aggregates.values() for axis in per_method},
                  key=lambda a: AXES.index(a) if a in AXES else len(AXES))
    scores: Dict[int, Dict[str, float]] = {m: {} for m in aggregates}
    for axis in axes:
        column = {m: per_method[axis] for m, per_method in aggregates.items() if axis in per_method}
        if len(column) != len(aggregates):
            raise IncompleteMatrix(f"axis '{axis}' is missing for some methods")
        for m, value in scale_axis(column).items():
            scores[m][axis] = value
    return scores


def aggregate_axes(reports: Iterable[MetricsReport]) -> Dict[int, Dict[str, float]]:
    """
    Sums each method's metrics over cases into the four axis aggregates.
    Methods 6 and 7 take Method 1's approximation error for accuracy. Zero
    sums are floored at δ so the logarithm stays defined.
    """
    reports = list(reports)
    by_cell = {(r.method, r.case): r for r in reports}
    methods = sorted({r.method for r in reports})
    cases = sorted({r.case for r in reports})

    aggregates: Dict[int, Dict[str, float]] = {}
    for m in methods:
        totals = dict.fromkeys(AXES, 0.0)
        for case in cases:
            cell = by_cell.get((m, case))
            if cell is None or cell.failed:
                raise IncompleteMatrix(f"no usable result for method {m} on case '{case}'")

            accuracy_cell = by_cell.get((1, case)) if m in (6, 7) else cell
            if accuracy_cell is None or accuracy_cell.approx_error is None:
                raise IncompleteMatrix(f"approximation error missing for method {m} on case '{case}'")
            totals["Accuracy"] += accuracy_cell.approx_error

            needed = (cell.eps_f, cell.eps_pg, cell.eps_v, cell.out_ratio, cell.eps_v_out)
            if any(v is None for v in needed):
                raise IncompleteMatrix(f"method {m} on case '{case}' lacks optimality or feasibility metrics")
            totals["Optimality"] += cell.eps_f + cell.eps_pg + cell.eps_v
            totals["Feasibility"] += cell.out_ratio + cell.eps_v_out
            totals["Speed"] += cell.wall_time_s or 0.0

        aggregates[m] = {axis: max(value, DELTA) for axis, value in totals.items()}
    return aggregates


def polygon_area(scores: Sequence[float]) -> float:
    """Area of a radar polygon with equally spaced spokes of the given lengths."""
    r = np.asarray(scores, dtype=float)
    n = r.size
    if n < 3:
        return 0.0
    return float(0.5 * math.sin(2.0 * math.pi / n) * np.sum(r * np.roll(r, -1)))
