"""
Core Model

Immutable domain types for a power network case, per-unit normalization and
the branch parameter helpers every other module builds on.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Dict, List, Tuple

import networkx as nx
import numpy as np

from src.errors import NonConvex, NonPositiveBase, ZeroImpedance

logger = logging.getLogger(__name__)


class BusKind(Enum):
    # Values are the MATPOWER bus-type codes.
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    """A network node. Powers are MW until the owning Network is per-unit."""
    id: int
    kind: BusKind
    p_load: float = 0.0
    q_load: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    v_mag: float = 1.0
    v_ang: float = 0.0  # radians
    v_max: float = 1.1
    v_min: float = 0.9
    base_kv: float = 0.0


@dataclass(frozen=True)
class Branch:
    """A line or transformer in the Pi model, tap and shift on the from side."""
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    tap: float = 1.0
    shift: float = 0.0  # radians
    status: bool = True


@dataclass(frozen=True)
class CostCurve:
    """Polynomial cost in physical MW, coefficients stored lowest degree first."""
    coefficients: Tuple[float, ...] = (0.0,)
    startup: float = 0.0
    shutdown: float = 0.0

    def __post_init__(self):
        # Trailing zero high-degree terms carry no information; dropping them
        # keeps curves comparable however many columns the case file used.
        coeffs = [float(c) for c in self.coefficients] or [0.0]
        while len(coeffs) > 1 and coeffs[-1] == 0.0:
            coeffs.pop()
        object.__setattr__(self, "coefficients", tuple(coeffs))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def evaluate(self, p_mw: float) -> float:
        # Horner, highest degree first
        total = 0.0
        for c in reversed(self.coefficients):
            total = total * p_mw + c
        return total

    def quadratic_terms(self) -> Tuple[float, float, float]:
        """
        Returns (c2, c1, c0) for OPF use. Rejects curves that are not convex
        quadratics: any nonzero coefficient above degree 2 or a negative c2.
        """
        padded = list(self.coefficients) + [0.0] * max(0, 3 - len(self.coefficients))
        if any(c != 0.0 for c in padded[3:]):
            raise NonConvex(f"cost curve of degree {self.degree} has nonzero terms above quadratic")
        c0, c1, c2 = padded[0], padded[1], padded[2]
        if c2 < 0:
            raise NonConvex(f"cost curve has negative quadratic coefficient {c2}")
        return c2, c1, c0


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    v_set: float = 1.0
    q_min: float = 0.0
    q_max: float = 0.0
    p_gen: float = 0.0  # dispatch stored in the case file
    status: bool = True
    cost: CostCurve = field(default_factory=CostCurve)


@dataclass(frozen=True)
class Network:
    """
    A parsed test system. `per_unit` records whether power quantities have
    already been divided by base_mva, which makes to_per_unit idempotent.
    `extras` carries MATPOWER fields this toolkit ignores, verbatim, so a
    serialized case keeps them.
    """
    name: str
    base_mva: float
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    generators: Tuple[Generator, ...]
    per_unit: bool = False
    extras: Tuple[str, ...] = ()

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @cached_property
    def bus_position(self) -> Dict[int, int]:
        """bus id -> row position"""
        return {bus.id: k for k, bus in enumerate(self.buses)}

    @cached_property
    def slack_position(self) -> int:
        for k, bus in enumerate(self.buses):
            if bus.kind is BusKind.SLACK:
                return k
        raise ValueError(f"network '{self.name}' has no slack bus")

    @cached_property
    def branch_from(self) -> np.ndarray:
        return np.array([self.bus_position[br.from_bus] for br in self.branches], dtype=int)

    @cached_property
    def branch_to(self) -> np.ndarray:
        return np.array([self.bus_position[br.to_bus] for br in self.branches], dtype=int)

    @cached_property
    def gen_bus(self) -> np.ndarray:
        return np.array([self.bus_position[g.bus] for g in self.generators], dtype=int)

    def generators_at(self, position: int) -> List[int]:
        return [k for k, pos in enumerate(self.gen_bus) if pos == position]

    def load_vector(self) -> np.ndarray:
        return np.array([bus.p_load for bus in self.buses], dtype=float)

    def voltage_setpoints(self) -> np.ndarray:
        """
        Per-bus voltage magnitude target: the first in-service generator's
        setpoint where one exists, otherwise the bus table magnitude.
        """
        vset = np.array([bus.v_mag for bus in self.buses], dtype=float)
        seen = set()
        for g, pos in zip(self.generators, self.gen_bus):
            if pos not in seen:
                vset[pos] = g.v_set
                seen.add(pos)
        return vset

    def generator_positions(self) -> np.ndarray:
        """Sorted bus positions hosting at least one generator."""
        return np.unique(self.gen_bus)


@dataclass(frozen=True, eq=False)
class BaselineSolution:
    """
    Reference optimum every linearized solution is compared with.
    Arrays are per-unit and radians, aligned with the network's bus,
    generator and branch order, and read-only.
    """
    v_mag: np.ndarray
    v_ang: np.ndarray
    pg: np.ndarray
    objective: float
    branch_flow: np.ndarray
    case: str = ""

    def __post_init__(self):
        for name in ("v_mag", "v_ang", "pg", "branch_flow"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def derive_series_admittance(branch: Branch) -> Tuple[float, float]:
    """Series conductance and susceptance, g = r/(r²+x²), b = -x/(r²+x²)."""
    denom = branch.r * branch.r + branch.x * branch.x
    if denom == 0.0:
        raise ZeroImpedance(f"branch {branch.from_bus}-{branch.to_bus} has zero impedance")
    return branch.r / denom, -branch.x / denom


def series_admittances(net: Network) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized derive_series_admittance over all branches."""
    g = np.empty(net.n_branch)
    b = np.empty(net.n_branch)
    for k, br in enumerate(net.branches):
        g[k], b[k] = derive_series_admittance(br)
    return g, b


def _scale_powers(net: Network, factor: float) -> Network:
    buses = tuple(
        replace(
            bus,
            p_load=bus.p_load * factor,
            q_load=bus.q_load * factor,
            shunt_g=bus.shunt_g * factor,
            shunt_b=bus.shunt_b * factor,
        )
        for bus in net.buses
    )
    generators = tuple(
        replace(
            g,
            p_min=g.p_min * factor,
            p_max=g.p_max * factor,
            q_min=g.q_min * factor,
            q_max=g.q_max * factor,
            p_gen=g.p_gen * factor,
        )
        for g in net.generators
    )
    return replace(net, buses=buses, generators=generators)


def to_per_unit(net: Network) -> Network:
    """
    Divides every power quantity by base_mva. Voltages, impedances and cost
    curves pass through untouched. Applying it twice is a no-op.
    """
    if net.base_mva <= 0:
        raise NonPositiveBase(f"base_mva must be positive, got {net.base_mva}")
    if net.per_unit:
        return net
    return replace(_scale_powers(net, 1.0 / net.base_mva), per_unit=True)


def to_physical(net: Network) -> Network:
    """Inverse of to_per_unit, used when writing case files."""
    if net.base_mva <= 0:
        raise NonPositiveBase(f"base_mva must be positive, got {net.base_mva}")
    if not net.per_unit:
        return net
    return replace(_scale_powers(net, net.base_mva), per_unit=False)


def validate_network(net: Network) -> List[str]:
    """
    Checks every type invariant plus connectivity. Returns one message per
    violation, each naming the offending entity and rule; an empty list
    means the network is usable.
    """
    violations: List[str] = []

    if net.base_mva <= 0:
        violations.append(f"network '{net.name}': non-positive base_mva {net.base_mva}")

    counts = Counter(bus.id for bus in net.buses)
    for bus_id, count in counts.items():
        if count > 1:
            violations.append(f"bus {bus_id}: duplicate bus id ({count} rows)")

    known = set(counts)
    slacks = [bus.id for bus in net.buses if bus.kind is BusKind.SLACK]
    if len(slacks) == 0:
        violations.append("network: no slack bus")
    elif len(slacks) > 1:
        violations.append(f"network: multiple slack buses {slacks}")

    for bus in net.buses:
        if not bus.v_min > 0:
            violations.append(f"bus {bus.id}: v_min must be positive (got {bus.v_min})")
        if bus.v_min > bus.v_max:
            violations.append(f"bus {bus.id}: v_min {bus.v_min} exceeds v_max {bus.v_max}")

    for k, br in enumerate(net.branches):
        label = f"branch {k + 1} ({br.from_bus}-{br.to_bus})"
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                violations.append(f"{label}: dangling reference to bus {end}")
        if br.x == 0.0:
            violations.append(f"{label}: zero series reactance")
        if br.r < 0.0:
            violations.append(f"{label}: negative resistance {br.r}")
        if not br.tap > 0.0:
            violations.append(f"{label}: non-positive tap ratio {br.tap}")
        if br.r * br.r + br.x * br.x > 0.0:
            g, b = derive_series_admittance(br)
            if not (math.isfinite(g) and math.isfinite(b)):
                violations.append(f"{label}: non-finite series admittance")

    setpoints: Dict[int, float] = {}
    for k, gen in enumerate(net.generators):
        label = f"generator {k + 1} (bus {gen.bus})"
        if gen.bus not in known:
            violations.append(f"{label}: dangling reference to bus {gen.bus}")
        if gen.p_min > gen.p_max:
            violations.append(f"{label}: p_min {gen.p_min} exceeds p_max {gen.p_max}")
        previous = setpoints.setdefault(gen.bus, gen.v_set)
        if previous != gen.v_set:
            violations.append(
                f"{label}: conflicting voltage setpoint {gen.v_set} vs {previous} on the same bus"
            )
        try:
            gen.cost.quadratic_terms()
        except NonConvex as e:
            violations.append(f"{label}: {e}")

    # Only judge connectivity once the references are sound.
    if known and not any("dangling" in v for v in violations):
        graph = nx.Graph()
        graph.add_nodes_from(known)
        graph.add_edges_from((br.from_bus, br.to_bus) for br in net.branches if br.status)
        islands = nx.number_connected_components(graph)
        if islands > 1:
            violations.append(f"network: connectivity violation, {islands} islands")

    if violations:
        logger.debug(f"validate_network('{net.name}') found {len(violations)} violations")
    return violations
