"""
Linear Methods

The five non-iterative linear active-power flow models. Each model is a
sparse affine map from a method-specific variable space to the from-side
branch flows, plus the per-bus balance rows an OPF is assembled from.

All five use series g and b only. Transformer taps and phase shifts are
ignored here while the AC engine models them fully.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from src.core_model import BusKind, Network, series_admittances, to_per_unit
from src.errors import RecoveryDomain, ZeroImpedance

logger = logging.getLogger(__name__)

# Constant adjustment applied to every Method 3 flow.
METHOD3_FACTOR = 0.95


class VariableKind(Enum):
    ANGLE = "theta"
    VOLTAGE = "V"
    SQUARED_VOLTAGE = "W"
    MODIFIED_ANGLE = "phi"
    LOG_VOLTAGE = "U"
    GENERATOR_OUTPUT = "Pg"


@dataclass(frozen=True)
class Variable:
    kind: VariableKind
    owner: int  # bus id, or generator index for GENERATOR_OUTPUT


class VariableSpace:
    """
    Ordered optimization variables with box bounds and pinned values.
    Filled once by a model builder and treated as read-only afterwards.
    """

    def __init__(self):
        self._variables: List[Variable] = []
        self._index: Dict[Variable, int] = {}
        self._lower: List[float] = []
        self._upper: List[float] = []
        self.pinned: Dict[int, float] = {}

    def add(self, kind: VariableKind, owner: int,
            lower: float = -math.inf, upper: float = math.inf) -> int:
        var = Variable(kind, owner)
        if var in self._index:
            raise ValueError(f"duplicate variable {kind.value}[{owner}]")
        self._index[var] = len(self._variables)
        self._variables.append(var)
        self._lower.append(lower)
        self._upper.append(upper)
        return self._index[var]

    def pin(self, index: int, value: float):
        if not math.isfinite(value):
            raise ValueError(f"cannot pin {self._variables[index]} to non-finite {value}")
        # a pin overrides the box, e.g. a setpoint above the bus v_max
        self.pinned[index] = float(value)
        self._lower[index] = float(value)
        self._upper[index] = float(value)

    def index(self, kind: VariableKind, owner: int) -> int:
        return self._index[Variable(kind, owner)]

    def block(self, kind: VariableKind) -> np.ndarray:
        """Column indices of one variable kind, in insertion order."""
        return np.array([k for k, v in enumerate(self._variables) if v.kind is kind], dtype=int)

    def has(self, kind: VariableKind) -> bool:
        return any(v.kind is kind for v in self._variables)

    @property
    def variables(self) -> Tuple[Variable, ...]:
        return tuple(self._variables)

    @property
    def size(self) -> int:
        return len(self._variables)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self._lower, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self._upper, dtype=float)

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True, eq=False)
class LinearFlowModel:
    """
    `flow_matrix @ x + flow_constant` is the from-side flow for methods 1-4.
    For Method 5 it is the numerator g(U_i-U_j) - b(θ_i-θ_j), which the
    model divides by (1 - U_i) to recover the flow.
    """
    method: int
    space: VariableSpace
    flow_matrix: sp.csr_matrix
    flow_constant: np.ndarray
    net: Network
    magnitude_kind: Optional[VariableKind]
    angle_kind: VariableKind

    @property
    def state_columns(self) -> Tuple[Optional[np.ndarray], np.ndarray]:
        mag = self.space.block(self.magnitude_kind) if self.magnitude_kind else None
        return mag, self.space.block(self.angle_kind)

    @property
    def pg_columns(self) -> np.ndarray:
        return self.space.block(VariableKind.GENERATOR_OUTPUT)

    def forward(self, v_mag: Sequence[float], v_ang: Sequence[float],
                pg: Optional[Sequence[float]] = None) -> np.ndarray:
        """Maps a per-bus (V, θ) state into this model's variable space."""
        v = np.asarray(v_mag, dtype=float)
        th = np.asarray(v_ang, dtype=float)
        x = np.zeros(self.space.size)
        mag_cols, ang_cols = self.state_columns
        kind = self.magnitude_kind

        if kind is VariableKind.VOLTAGE:
            x[mag_cols] = v
        elif kind is VariableKind.SQUARED_VOLTAGE:
            x[mag_cols] = v * v
        elif kind is VariableKind.LOG_VOLTAGE:
            if np.any(v <= 0):
                raise RecoveryDomain("log-voltage transform needs V > 0")
            x[mag_cols] = np.log(v)

        if self.angle_kind is VariableKind.MODIFIED_ANGLE:
            x[ang_cols] = th * v * v
        else:
            x[ang_cols] = th

        if pg is not None:
            x[self.pg_columns] = np.asarray(pg, dtype=float)
        return x

    def recover(self, x: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        """Maps a variable vector back to per-bus (V, θ)."""
        x = np.asarray(x, dtype=float)
        mag_cols, ang_cols = self.state_columns
        kind = self.magnitude_kind

        if kind is None:
            v = np.ones(self.net.n_bus)
        elif kind is VariableKind.VOLTAGE:
            v = x[mag_cols].copy()
        elif kind is VariableKind.SQUARED_VOLTAGE:
            w = x[mag_cols]
            if np.any(w <= 0):
                raise RecoveryDomain(f"squared voltage must be positive, min W = {w.min():.6g}")
            v = np.sqrt(w)
        else:
            u = x[mag_cols]
            if np.any(u >= 1.0):
                raise RecoveryDomain(f"log voltage must stay below 1, max U = {u.max():.6g}")
            v = np.exp(u)

        if self.angle_kind is VariableKind.MODIFIED_ANGLE:
            th = x[ang_cols] / (v * v)
        else:
            th = x[ang_cols].copy()
        return v, th

    def branch_flows(self, x: Sequence[float]) -> np.ndarray:
        """From-side flows implied by a variable vector."""
        x = np.asarray(x, dtype=float)
        flows = self.flow_matrix @ x + self.flow_constant
        if self.method == 5:
            mag_cols, _ = self.state_columns
            u_from = x[mag_cols][self.net.branch_from]
            if np.any(u_from >= 1.0):
                raise RecoveryDomain("flow recovery needs U_i < 1 at every from bus")
            flows = flows / (1.0 - u_from)
        return flows

    def _generator_incidence(self) -> sp.csr_matrix:
        net = self.net
        cols = self.pg_columns
        return sp.csr_matrix(
            (np.ones(net.n_gen), (net.gen_bus, cols)), shape=(net.n_bus, self.space.size)
        )

    def nodal_balance(self, load: Optional[Sequence[float]] = None) -> Tuple[sp.csr_matrix, np.ndarray]:
        """
        One row per bus, `matrix @ x = rhs`. For methods 1-4 the row reads
        Σ Pg - Σ P_ij = load. Method 5 keeps the (1 - U_i) factor linear:
        a load bus gives Σ N_ij - load·U_i = -load, a generator bus with
        pinned u_i gives Σ N_ij - (1 - u_i)Σ Pg = -load(1 - u_i).
        """
        net = self.net
        load = net.load_vector() if load is None else np.asarray(load, dtype=float)
        nl = net.n_branch
        rows = np.arange(nl)
        incidence = sp.csr_matrix(
            (np.r_[np.ones(nl), -np.ones(nl)],
             (np.r_[rows, rows], np.r_[net.branch_from, net.branch_to])),
            shape=(nl, net.n_bus),
        ).T.tocsr()
        outflow = (incidence @ self.flow_matrix).tocsr()
        outflow_const = incidence @ self.flow_constant
        gens = self._generator_incidence()

        if self.method != 5:
            return (gens - outflow).tocsr(), load + outflow_const

        mag_cols, _ = self.state_columns
        pinned_u = np.full(net.n_bus, np.nan)
        for pos, col in enumerate(mag_cols):
            if col in self.space.pinned:
                pinned_u[pos] = self.space.pinned[col]

        factor = np.where(np.isnan(pinned_u), 0.0, 1.0 - pinned_u)
        free = np.isnan(pinned_u)
        load_on_u = sp.csr_matrix(
            (load[free], (np.flatnonzero(free), mag_cols[free])),
            shape=(net.n_bus, self.space.size),
        )
        matrix = outflow - sp.diags(factor) @ gens - load_on_u
        rhs = np.where(free, -load, -load * factor) - outflow_const
        return matrix.tocsr(), rhs


def _check_reactance(net: Network):
    for br in net.branches:
        if br.x == 0.0:
            raise ZeroImpedance(f"branch {br.from_bus}-{br.to_bus} has zero reactance")


def _difference_terms(net: Network, cols: np.ndarray, coeff: np.ndarray, size: int) -> sp.csr_matrix:
    """Sparse rows coeff_k · (x[cols[from_k]] - x[cols[to_k]])."""
    nl = net.n_branch
    rows = np.arange(nl)
    return sp.csr_matrix(
        (np.r_[coeff, -coeff],
         (np.r_[rows, rows], np.r_[cols[net.branch_from], cols[net.branch_to]])),
        shape=(nl, size),
    )


def _build_space(net: Network, magnitude: Optional[VariableKind], angle: VariableKind,
                 magnitude_bounds=None) -> VariableSpace:
    space = VariableSpace()
    for bus in net.buses:
        space.add(angle, bus.id)
    if magnitude is not None:
        for bus in net.buses:
            lo, hi = magnitude_bounds(bus) if magnitude_bounds else (-math.inf, math.inf)
            space.add(magnitude, bus.id, lo, hi)
    for k, gen in enumerate(net.generators):
        space.add(VariableKind.GENERATOR_OUTPUT, k, gen.p_min, gen.p_max)

    slack = net.buses[net.slack_position]
    space.pin(space.index(angle, slack.id), 0.0)
    return space


def _status(net: Network) -> np.ndarray:
    return np.array([1.0 if br.status else 0.0 for br in net.branches])


def _model(method, net, space, flow, magnitude, angle) -> LinearFlowModel:
    logger.debug(f"built method {method} for '{net.name}': {space.size} variables, "
                 f"{len(space.pinned)} pinned")
    return LinearFlowModel(
        method=method,
        space=space,
        flow_matrix=flow.tocsr(),
        flow_constant=np.zeros(net.n_branch),
        net=net,
        magnitude_kind=magnitude,
        angle_kind=angle,
    )


def build_method1(net: Network) -> LinearFlowModel:
    """DC flow, P_ij = (θ_i - θ_j)/x_ij."""
    net = to_per_unit(net)
    _check_reactance(net)
    space = _build_space(net, None, VariableKind.ANGLE)
    x = np.array([br.x for br in net.branches], dtype=float)
    coeff = _status(net) / x if net.n_branch else np.zeros(0)
    flow = _difference_terms(net, space.block(VariableKind.ANGLE), coeff, space.size)
    return _model(1, net, space, flow, None, VariableKind.ANGLE)


def _voltage_bounds(bus):
    return bus.v_min, bus.v_max


def _squared_bounds(bus):
    return bus.v_min ** 2, bus.v_max ** 2


def _log_bounds(bus):
    return math.log(bus.v_min), math.log(bus.v_max)


def build_method2(net: Network) -> LinearFlowModel:
    """First-order Taylor expansion, P_ij = g(V_i - V_j) - b(θ_i - θ_j)."""
    net = to_per_unit(net)
    _check_reactance(net)
    space = _build_space(net, VariableKind.VOLTAGE, VariableKind.ANGLE, _voltage_bounds)
    slack = net.slack_position
    space.pin(space.index(VariableKind.VOLTAGE, net.buses[slack].id),
              net.voltage_setpoints()[slack])

    g, b = series_admittances(net)
    status = _status(net)
    flow = (
        _difference_terms(net, space.block(VariableKind.VOLTAGE), g * status, space.size)
        + _difference_terms(net, space.block(VariableKind.ANGLE), -b * status, space.size)
    )
    return _model(2, net, space, flow, VariableKind.VOLTAGE, VariableKind.ANGLE)


def build_method3(net: Network) -> LinearFlowModel:
    """
    P_ij = 0.95(g(W_i - W_j) - b(φ_i - φ_j)) with W = V² and φ = θV²
    treated as independent variables. φ and W are pinned at the slack.
    """
    net = to_per_unit(net)
    _check_reactance(net)
    space = _build_space(net, VariableKind.SQUARED_VOLTAGE, VariableKind.MODIFIED_ANGLE,
                         _squared_bounds)
    slack = net.slack_position
    space.pin(space.index(VariableKind.SQUARED_VOLTAGE, net.buses[slack].id),
              net.voltage_setpoints()[slack] ** 2)

    g, b = series_admittances(net)
    status = _status(net) * METHOD3_FACTOR
    flow = (
        _difference_terms(net, space.block(VariableKind.SQUARED_VOLTAGE), g * status, space.size)
        + _difference_terms(net, space.block(VariableKind.MODIFIED_ANGLE), -b * status, space.size)
    )
    return _model(3, net, space, flow, VariableKind.SQUARED_VOLTAGE, VariableKind.MODIFIED_ANGLE)


def build_method4(net: Network) -> LinearFlowModel:
    """P_ij = g(W_i - W_j)/2 - b(θ_i - θ_j)."""
    net = to_per_unit(net)
    _check_reactance(net)
    space = _build_space(net, VariableKind.SQUARED_VOLTAGE, VariableKind.ANGLE, _squared_bounds)
    slack = net.slack_position
    space.pin(space.index(VariableKind.SQUARED_VOLTAGE, net.buses[slack].id),
              net.voltage_setpoints()[slack] ** 2)

    g, b = series_admittances(net)
    status = _status(net)
    flow = (
        _difference_terms(net, space.block(VariableKind.SQUARED_VOLTAGE), 0.5 * g * status, space.size)
        + _difference_terms(net, space.block(VariableKind.ANGLE), -b * status, space.size)
    )
    return _model(4, net, space, flow, VariableKind.SQUARED_VOLTAGE, VariableKind.ANGLE)


def build_method5(net: Network) -> LinearFlowModel:
    """
    Logarithmic voltage, P_ij(1 - U_i) = g(U_i - U_j) - b(θ_i - θ_j).
    U is pinned to ln(v_set) at every bus that hosts a generator or is
    typed PV/slack.
    """
    net = to_per_unit(net)
    _check_reactance(net)
    space = _build_space(net, VariableKind.LOG_VOLTAGE, VariableKind.ANGLE, _log_bounds)

    vset = net.voltage_setpoints()
    hosts = set(int(p) for p in net.gen_bus)
    for pos, bus in enumerate(net.buses):
        if pos in hosts or bus.kind is not BusKind.PQ:
            if vset[pos] >= math.e:
                raise RecoveryDomain(f"bus {bus.id}: setpoint {vset[pos]} puts U at or above 1")
            space.pin(space.index(VariableKind.LOG_VOLTAGE, bus.id), math.log(vset[pos]))

    g, b = series_admittances(net)
    status = _status(net)
    flow = (
        _difference_terms(net, space.block(VariableKind.LOG_VOLTAGE), g * status, space.size)
        + _difference_terms(net, space.block(VariableKind.ANGLE), -b * status, space.size)
    )
    return _model(5, net, space, flow, VariableKind.LOG_VOLTAGE, VariableKind.ANGLE)


BUILDERS = {
    1: build_method1,
    2: build_method2,
    3: build_method3,
    4: build_method4,
    5: build_method5,
}


def build_method(method: int, net: Network) -> LinearFlowModel:
    try:
        builder = BUILDERS[method]
    except KeyError:
        raise ValueError(f"no linear model for method {method}; expected one of {sorted(BUILDERS)}")
    return builder(net)


def evaluate_flow(model: LinearFlowModel, v_mag: Sequence[float], v_ang: Sequence[float]) -> np.ndarray:
    """
    Per-branch from-side flows of `model` at a per-bus (V, θ) state, going
    through the method's forward transform.
    """
    return model.branch_flows(model.forward(v_mag, v_ang))
