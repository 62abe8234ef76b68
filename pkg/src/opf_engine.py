"""
OPF Engine

Assembles the active-power-only linearized OPF for a LinearFlowModel, solves
it, and runs the loss-feedback loop that extends Method 1 into Methods 6
and 7.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from src import qp_solver
from src.core_model import Network, series_admittances, to_per_unit
from src.errors import InconsistentModel, Infeasible, IterLimit
from src.linear_methods import LinearFlowModel, build_method, build_method1
from src.qp_solver import KktResiduals, QuadraticProgram, QpResult, kkt_residuals
from src.settings import SolverSettings, get_settings

logger = logging.getLogger(__name__)

LOSS_METHODS = (6, 7)
ALL_METHODS = (1, 2, 3, 4, 5, 6, 7)
LOSS_SPLITS = ("half", "from", "to")


class OpfStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True, eq=False)
class OpfProblem:
    model: LinearFlowModel
    net: Network
    qp: QuadraticProgram
    extra_loads: np.ndarray

    @property
    def n_balance(self) -> int:
        return self.qp.m

    @property
    def pinned(self) -> Dict[int, float]:
        return dict(self.model.space.pinned)


@dataclass(frozen=True, eq=False)
class OpfSolution:
    method: int
    status: OpfStatus
    pg: np.ndarray
    x: np.ndarray
    v_mag: np.ndarray
    v_ang: np.ndarray
    objective: float
    branch_flows: np.ndarray
    eq_dual: np.ndarray
    lower_dual: np.ndarray
    upper_dual: np.ndarray
    residuals: KktResiduals
    iterations: int

    @property
    def total_generation(self) -> float:
        return float(np.sum(self.pg))


@dataclass
class LossIterationTrace:
    """One entry per solved iteration; iteration 1 carries zero losses."""
    method: int
    dispatch: List[np.ndarray] = field(default_factory=list)
    losses: List[np.ndarray] = field(default_factory=list)
    extra_loads: List[np.ndarray] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.dispatch)

    def total_loss(self, iteration: int) -> float:
        """Σ estimated branch loss fed into `iteration` (1-based)."""
        return float(np.sum(self.losses[iteration - 1]))


def _check_consistent(model: LinearFlowModel, net: Network):
    ref = model.net
    if (
        ref.n_bus != net.n_bus
        or ref.n_branch != net.n_branch
        or ref.n_gen != net.n_gen
        or [b.id for b in ref.buses] != [b.id for b in net.buses]
    ):
        raise InconsistentModel(
            f"model built for '{ref.name}' ({ref.n_bus} buses, {ref.n_branch} branches, "
            f"{ref.n_gen} generators) does not match network '{net.name}'"
        )


def assemble_opf(model: LinearFlowModel, net: Network,
                 extra_loads: Optional[Sequence[float]] = None) -> OpfProblem:
    """
    One balance equality per bus, a convex quadratic cost on the Pg
    variables and the variable boxes of the model (pins included).

    Cost curves are in MW, so with S = base_mva the per-unit objective is
    c2·S²·Pg² + c1·S·Pg + c0.
    """
    net = to_per_unit(net)
    _check_consistent(model, net)

    extra = np.zeros(net.n_bus) if extra_loads is None else np.asarray(extra_loads, dtype=float)
    if extra.shape != (net.n_bus,):
        raise InconsistentModel(f"extra_loads has shape {extra.shape}, expected ({net.n_bus},)")

    eq_matrix, eq_rhs = model.nodal_balance(net.load_vector() + extra)

    n = model.space.size
    pg_cols = model.pg_columns
    s = net.base_mva
    quad = np.zeros(n)
    linear = np.zeros(n)
    constant = 0.0
    for k, gen in enumerate(net.generators):
        c2, c1, c0 = gen.cost.quadratic_terms()
        quad[pg_cols[k]] = 2.0 * c2 * s * s
        linear[pg_cols[k]] = c1 * s
        constant += c0

    qp = QuadraticProgram(
        hessian=sp.diags(quad).tocsr(),
        linear=linear,
        eq_matrix=eq_matrix,
        eq_rhs=eq_rhs,
        lower=model.space.lower,
        upper=model.space.upper,
        constant=constant,
    )
    return OpfProblem(model=model, net=net, qp=qp, extra_loads=extra)


def _to_solution(problem: OpfProblem, result: QpResult, status: OpfStatus) -> OpfSolution:
    model = problem.model
    v_mag, v_ang = model.recover(result.x)
    return OpfSolution(
        method=model.method,
        status=status,
        pg=result.x[model.pg_columns].copy(),
        x=result.x,
        v_mag=v_mag,
        v_ang=v_ang,
        objective=result.objective,
        branch_flows=model.branch_flows(result.x),
        eq_dual=result.eq_dual,
        lower_dual=result.lower_dual,
        upper_dual=result.upper_dual,
        residuals=result.residuals,
        iterations=result.iterations,
    )


def solve_qp(problem: OpfProblem, settings: Optional[SolverSettings] = None) -> OpfSolution:
    """Solves the assembled problem; failures keep their partial solution attached."""
    try:
        result = qp_solver.solve_qp(problem.qp, settings)
    except Infeasible as e:
        if isinstance(e.solution, QpResult):
            e.solution = _partial(problem, e.solution, OpfStatus.INFEASIBLE)
        raise
    except IterLimit as e:
        if isinstance(e.solution, QpResult):
            e.solution = _partial(problem, e.solution, OpfStatus.ITER_LIMIT)
        raise
    return _to_solution(problem, result, OpfStatus.OPTIMAL)


def _partial(problem: OpfProblem, result: QpResult, status: OpfStatus):
    try:
        return _to_solution(problem, result, status)
    except Exception:
        # an unconverged iterate may sit outside the recovery domain
        return result


def check_kkt(problem: OpfProblem, solution: OpfSolution) -> KktResiduals:
    """KKT residuals recomputed from the problem data, independent of the solver loop."""
    return kkt_residuals(problem.qp, solution.x, solution.eq_dual,
                         solution.lower_dual, solution.upper_dual)


def run_method(method_id: int, net: Network, settings: Optional[SolverSettings] = None) -> OpfSolution:
    """build_method{k} -> assemble_opf -> solve_qp for methods 1-5."""
    net = to_per_unit(net)
    model = build_method(method_id, net)
    solution = solve_qp(assemble_opf(model, net), settings)
    logger.debug(
        f"method {method_id} on '{net.name}': objective {solution.objective:.6f}, "
        f"Σ Pg {solution.total_generation:.6f} p.u."
    )
    return solution


def estimate_loss_m6(prev: OpfSolution, net: Network) -> np.ndarray:
    """g_ij (θ_i - θ_j)² per branch."""
    net = to_per_unit(net)
    g, _ = series_admittances(net)
    dth = prev.v_ang[net.branch_from] - prev.v_ang[net.branch_to]
    return g * dth * dth


def estimate_loss_m7(prev: OpfSolution, net: Network,
                     alpha: Union[None, float, Sequence[float]] = None) -> np.ndarray:
    """(α_ij P_ij)² r_ij per branch, P_ij taken from the previous linear solution."""
    net = to_per_unit(net)
    r = np.array([br.r for br in net.branches], dtype=float)
    a = np.ones(net.n_branch) if alpha is None else np.broadcast_to(np.asarray(alpha, dtype=float), (net.n_branch,))
    p = a * prev.branch_flows
    return p * p * r


def resolve_alpha(net: Network, mapping: Mapping[str, float], default: float = 1.0) -> np.ndarray:
    """
    Per-branch α from a mapping keyed "from-to" (bus ids). A key applies to
    every parallel branch between those buses, in either orientation.
    """
    alpha = np.full(net.n_branch, float(default))
    for key, value in mapping.items():
        try:
            f, t = (int(part) for part in str(key).split("-"))
        except ValueError:
            raise ValueError(f"alpha key '{key}' is not of the form '<from>-<to>'")
        hits = [
            k for k, br in enumerate(net.branches)
            if (br.from_bus, br.to_bus) in ((f, t), (t, f))
        ]
        if not hits:
            raise ValueError(f"alpha key '{key}' matches no branch of '{net.name}'")
        alpha[hits] = float(value)
    return alpha


def allocate_losses(net: Network, losses: np.ndarray, split: str = "half") -> np.ndarray:
    """Turns per-branch losses into per-bus fictitious loads."""
    if split not in LOSS_SPLITS:
        raise ValueError(f"unknown loss split '{split}', expected one of {LOSS_SPLITS}")
    share_from = {"half": 0.5, "from": 1.0, "to": 0.0}[split]
    loads = np.zeros(net.n_bus)
    np.add.at(loads, net.branch_from, share_from * losses)
    np.add.at(loads, net.branch_to, (1.0 - share_from) * losses)
    return loads


def run_loss_iteration(
    method_id: int,
    net: Network,
    iters: Optional[int] = None,
    split: str = "half",
    alpha: Union[None, float, Sequence[float]] = None,
    tolerance: Optional[float] = None,
    settings: Optional[SolverSettings] = None,
) -> Tuple[OpfSolution, LossIterationTrace]:
    """
    Iteration 1 is the plain Method 1 OPF. Every later iteration estimates
    branch losses from the previous solution, replaces the fictitious loads
    with them and re-solves. With `tolerance` set, the loop also stops once
    the total fictitious load changes by no more than that amount.
    """
    if method_id not in LOSS_METHODS:
        raise ValueError(f"loss iteration is defined for methods {LOSS_METHODS}, got {method_id}")
    settings = settings or get_settings()
    iters = settings.loss_iterations if iters is None else iters
    if iters < 1:
        raise ValueError(f"iteration count must be at least 1, got {iters}")
    tolerance = settings.loss_tolerance if tolerance is None else tolerance

    net = to_per_unit(net)
    model = build_method1(net)
    trace = LossIterationTrace(method=method_id)

    losses = np.zeros(net.n_branch)
    extra = np.zeros(net.n_bus)
    solution = None
    for iteration in range(1, iters + 1):
        if solution is not None:
            if method_id == 6:
                losses = estimate_loss_m6(solution, net)
            else:
                losses = estimate_loss_m7(solution, net, alpha)
            previous_total = float(np.sum(extra))
            extra = allocate_losses(net, losses, split)
            if tolerance is not None and abs(np.sum(extra) - previous_total) <= tolerance:
                logger.debug(f"loss loop settled after {iteration - 1} iterations")
                break

        solution = solve_qp(assemble_opf(model, net, extra), settings)
        trace.dispatch.append(solution.pg.copy())
        trace.losses.append(losses.copy())
        trace.extra_loads.append(extra.copy())
        logger.debug(
            f"method {method_id} iteration {iteration}: fictitious load {np.sum(extra):.6f} p.u., "
            f"objective {solution.objective:.6f}"
        )

    return replace(solution, method=method_id), trace


def solve_method(
    method_id: int,
    net: Network,
    settings: Optional[SolverSettings] = None,
    iters: Optional[int] = None,
    split: str = "half",
    alpha: Union[None, float, Sequence[float]] = None,
) -> OpfSolution:
    """Any of methods 1-7, the way the benchmark runs them."""
    if method_id in LOSS_METHODS:
        solution, _ = run_loss_iteration(method_id, net, iters=iters, split=split,
                                         alpha=alpha, settings=settings)
        return solution
    return run_method(method_id, net, settings)
