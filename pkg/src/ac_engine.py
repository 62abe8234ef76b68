"""
AC Engine

Exact AC branch flow and loss expressions, nodal admittance construction and a
polar Newton-Raphson power flow. This is the ground truth every linearized
solution is validated against.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.core_model import BusKind, Network, to_per_unit
from src.errors import NonConvergence, SingularJacobian
from src.settings import SolverSettings, get_settings

logger = logging.getLogger(__name__)


def exact_branch_flow(g, b, v_i, v_j, th_i, th_j):
    """
    Active power leaving bus i towards bus j over a plain series branch:
    P_ij = g(V_i² - V_i V_j cos Δθ) - b V_i V_j sin Δθ.

    Works elementwise on numpy arrays as well as on scalars.
    """
    dth = th_i - th_j
    return g * (v_i * v_i - v_i * v_j * np.cos(dth)) - b * v_i * v_j * np.sin(dth)


def exact_branch_loss(g, b, v_i, v_j, th_i, th_j):
    """P_ij + P_ji, which reduces to g(V_i² + V_j² - 2 V_i V_j cos Δθ)."""
    dth = th_i - th_j
    return g * (v_i * v_i + v_j * v_j - 2.0 * v_i * v_j * np.cos(dth))


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    """
    ybus: n_bus x n_bus nodal admittance.
    yf, yt: n_branch x n_bus matrices giving from/to end branch currents.
    """
    ybus: sp.csr_matrix
    yf: sp.csr_matrix
    yt: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.ybus.shape[0]


@dataclass(frozen=True, eq=False)
class SteadyState:
    v_mag: np.ndarray
    v_ang: np.ndarray
    branch_flow_from: np.ndarray
    branch_flow_to: np.ndarray
    branch_loss: np.ndarray
    slack_injection: float
    iterations: int
    max_mismatch: float
    generator_output: np.ndarray
    mismatch_history: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def total_loss(self) -> float:
        return float(np.sum(self.branch_loss))


def build_admittance(net: Network) -> AdmittanceMatrix:
    """
    Pi-model branches with the off-nominal tap and phase shift on the from
    side; bus shunts on the diagonal. Out-of-service branches contribute
    nothing.
    """
    net = to_per_unit(net)
    nb, nl = net.n_bus, net.n_branch

    r = np.array([br.r for br in net.branches], dtype=float)
    x = np.array([br.x for br in net.branches], dtype=float)
    charging = np.array([br.b_charge for br in net.branches], dtype=float)
    tap = np.array([br.tap for br in net.branches], dtype=float)
    shift = np.array([br.shift for br in net.branches], dtype=float)
    status = np.array([1.0 if br.status else 0.0 for br in net.branches])

    ys = status / (r + 1j * x) if nl else np.zeros(0, dtype=complex)
    t = tap * np.exp(1j * shift)
    ytt = ys + 1j * status * charging / 2.0
    yff = ytt / (t * np.conj(t))
    yft = -ys / np.conj(t)
    ytf = -ys / t

    rows = np.arange(nl)
    f, to = net.branch_from, net.branch_to
    cf = sp.csr_matrix((np.ones(nl), (rows, f)), shape=(nl, nb))
    ct = sp.csr_matrix((np.ones(nl), (rows, to)), shape=(nl, nb))

    yf = sp.csr_matrix(
        (np.r_[yff, yft], (np.r_[rows, rows], np.r_[f, to])), shape=(nl, nb)
    )
    yt = sp.csr_matrix(
        (np.r_[ytf, ytt], (np.r_[rows, rows], np.r_[f, to])), shape=(nl, nb)
    )
    ysh = np.array([bus.shunt_g + 1j * bus.shunt_b for bus in net.buses], dtype=complex)
    ybus = (cf.T @ yf + ct.T @ yt + sp.diags(ysh)).tocsr()

    return AdmittanceMatrix(ybus=ybus, yf=yf, yt=yt)


def _dsbus_dv(ybus: sp.csr_matrix, v: np.ndarray):
    """Partial derivatives of the complex bus injections w.r.t. |V| and angle."""
    ibus = ybus @ v
    diag_v = sp.diags(v)
    diag_ibus = sp.diags(ibus)
    diag_vnorm = sp.diags(v / np.abs(v))

    ds_dvm = diag_v @ (ybus @ diag_vnorm).conj() + diag_ibus.conj() @ diag_vnorm
    ds_dva = 1j * diag_v @ (diag_ibus - ybus @ diag_v).conj()
    return ds_dvm.tocsr(), ds_dva.tocsr()


def _bus_setpoints(net: Network, v_setpoints: Optional[Sequence[float]]) -> np.ndarray:
    """Per-bus magnitude targets from per-generator setpoints (first unit wins)."""
    vset = np.array([bus.v_mag for bus in net.buses], dtype=float)
    setpoints = (
        np.asarray(v_setpoints, dtype=float)
        if v_setpoints is not None
        else np.array([g.v_set for g in net.generators], dtype=float)
    )
    seen = set()
    for k, pos in enumerate(net.gen_bus):
        if pos not in seen:
            vset[pos] = setpoints[k]
            seen.add(pos)
    for pos, bus in enumerate(net.buses):
        if bus.kind is not BusKind.PQ and pos not in seen:
            logger.warning(
                f"bus {bus.id} is {bus.kind.name} but hosts no generator; "
                f"holding its table magnitude {bus.v_mag}"
            )
    return vset


def _mismatch(ybus, v, sbus, pv, pq) -> np.ndarray:
    mis = v * np.conj(ybus @ v) - sbus
    return np.r_[mis[pv].real, mis[pq].real, mis[pq].imag]


def solve_power_flow(
    net: Network,
    dispatch: Sequence[float],
    v_setpoints: Optional[Sequence[float]] = None,
    settings: Optional[SolverSettings] = None,
    warm_start: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
) -> SteadyState:
    """
    Full Newton-Raphson on the polar mismatch equations.

    Args:
        net: the network (converted to per-unit if needed)
        dispatch: per-generator active output, per-unit; slack-bus units are
            ignored on input and report their share of the slack pickup
        v_setpoints: per-generator voltage magnitude; the case setpoints when omitted
        settings: tolerance and iteration cap
        warm_start: optional (v_mag, v_ang) initial state instead of the flat start

    Reactive and voltage limits are not enforced.
    """
    settings = settings or get_settings()
    net = to_per_unit(net)
    nb = net.n_bus
    dispatch = np.asarray(dispatch, dtype=float)
    if dispatch.shape != (net.n_gen,):
        raise ValueError(f"dispatch has shape {dispatch.shape}, expected ({net.n_gen},)")

    slack = net.slack_position
    kinds = [bus.kind for bus in net.buses]
    pv = np.array([k for k in range(nb) if kinds[k] is BusKind.PV], dtype=int)
    pq = np.array([k for k in range(nb) if kinds[k] is BusKind.PQ], dtype=int)
    pvpq = np.r_[pv, pq]

    ybus = build_admittance(net).ybus
    vset = _bus_setpoints(net, v_setpoints)

    p_inj = -net.load_vector()
    q_inj = -np.array([bus.q_load for bus in net.buses], dtype=float)
    for k, pos in enumerate(net.gen_bus):
        if pos != slack:
            p_inj[pos] += dispatch[k]
    sbus = p_inj + 1j * q_inj

    if warm_start is not None:
        vm = np.array(warm_start[0], dtype=float)
        va = np.array(warm_start[1], dtype=float)
    else:
        vm = np.ones(nb)
        va = np.zeros(nb)
    vm[pv] = vset[pv]
    vm[slack] = vset[slack]
    va[slack] = 0.0
    v = vm * np.exp(1j * va)

    npv, npq = len(pv), len(pq)
    f = _mismatch(ybus, v, sbus, pv, pq)
    norm_f = float(np.max(np.abs(f))) if f.size else 0.0
    history: List[float] = [norm_f]
    iterations = 0

    while norm_f > settings.pf_tolerance and iterations < settings.pf_max_iterations:
        iterations += 1
        ds_dvm, ds_dva = _dsbus_dv(ybus, v)
        j11 = ds_dva[pvpq, :][:, pvpq].real
        j12 = ds_dvm[pvpq, :][:, pq].real
        j21 = ds_dva[pq, :][:, pvpq].imag
        j22 = ds_dvm[pq, :][:, pq].imag
        jac = sp.bmat([[j11, j12], [j21, j22]], format="csc")

        try:
            dx = -splu(jac).solve(f)
        except RuntimeError as e:
            raise SingularJacobian(f"Jacobian factorization failed at iteration {iterations}: {e}") from e
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"non-finite Newton step at iteration {iterations}")

        va[pv] += dx[:npv]
        va[pq] += dx[npv:npv + npq]
        vm[pq] += dx[npv + npq:]
        v = vm * np.exp(1j * va)
        vm = np.abs(v)
        va = np.angle(v)

        f = _mismatch(ybus, v, sbus, pv, pq)
        norm_f = float(np.max(np.abs(f))) if f.size else 0.0
        history.append(norm_f)
        logger.debug(f"NR iteration {iterations}: max mismatch {norm_f:.3e}")

    if norm_f > settings.pf_tolerance:
        raise NonConvergence(
            f"power flow on '{net.name}' did not converge in {iterations} iterations "
            f"(max mismatch {norm_f:.3e})",
            mismatch=norm_f,
            iterations=iterations,
        )

    adm = build_admittance(net)
    sf = v[net.branch_from] * np.conj(adm.yf @ v)
    st = v[net.branch_to] * np.conj(adm.yt @ v)
    p_from, p_to = sf.real, st.real

    s_calc = v * np.conj(ybus @ v)
    slack_injection = float(s_calc[slack].real + net.buses[slack].p_load)

    generator_output = dispatch.copy()
    slack_units = net.generators_at(slack)
    for k in slack_units:
        generator_output[k] = slack_injection / len(slack_units)

    logger.debug(
        f"power flow on '{net.name}' converged in {iterations} iterations, "
        f"slack pickup {slack_injection:.6f} p.u."
    )
    return SteadyState(
        v_mag=vm,
        v_ang=va,
        branch_flow_from=p_from,
        branch_flow_to=p_to,
        branch_loss=p_from + p_to,
        slack_injection=slack_injection,
        iterations=iterations,
        max_mismatch=norm_f,
        generator_output=generator_output,
        mismatch_history=tuple(history),
    )
