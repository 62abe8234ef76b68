"""
QP Solver

Convex quadratic programs with linear equalities and box bounds:

    minimize    ½ xᵀHx + cᵀx + c0
    subject to  A x = b,  l ≤ x ≤ u

solved by a Mehrotra predictor-corrector primal-dual interior point method
over the sparse regularized KKT system. Infeasibility is certified with a
phase-one linear program.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.linalg import splu

from src.errors import Infeasible, IterLimit, NonConvex
from src.settings import SolverSettings, get_settings

logger = logging.getLogger(__name__)

STEP_TO_BOUNDARY = 0.995
PRIMAL_REGULARIZATION = 1e-10
DUAL_REGULARIZATION = 1e-10
REFINEMENT_STEPS = 2
STAGNATION_WINDOW = 10


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    hessian: sp.csr_matrix
    linear: np.ndarray
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    constant: float = 0.0

    @property
    def n(self) -> int:
        return self.linear.shape[0]

    @property
    def m(self) -> int:
        return self.eq_rhs.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.hessian @ x) + self.linear @ x + self.constant)


@dataclass(frozen=True)
class KktResiduals:
    """Infinity norms, in the units of the original (unscaled) problem."""
    primal: float
    stationarity: float
    complementarity: float

    def within(self, primal_tol: float, dual_tol: float) -> bool:
        return (
            self.primal <= primal_tol
            and self.stationarity <= dual_tol
            and self.complementarity <= dual_tol
        )


@dataclass(frozen=True, eq=False)
class QpResult:
    x: np.ndarray
    eq_dual: np.ndarray
    lower_dual: np.ndarray
    upper_dual: np.ndarray
    objective: float
    iterations: int
    residuals: KktResiduals
    status: str = "optimal"


def kkt_residuals(qp: QuadraticProgram, x, eq_dual, lower_dual, upper_dual) -> KktResiduals:
    """
    Residuals of the Lagrangian ½xᵀHx + cᵀx + yᵀ(Ax - b) - zlᵀ(x - l) - zuᵀ(u - x).
    Complementarity also absorbs any negative bound multiplier.
    """
    x = np.asarray(x, dtype=float)
    has_l = np.isfinite(qp.lower)
    has_u = np.isfinite(qp.upper)
    zl = np.where(has_l, lower_dual, 0.0)
    zu = np.where(has_u, upper_dual, 0.0)

    grad = qp.hessian @ x + qp.linear + qp.eq_matrix.T @ eq_dual - zl + zu
    stationarity = float(np.max(np.abs(grad))) if grad.size else 0.0

    primal_terms = [np.abs(qp.eq_matrix @ x - qp.eq_rhs)]
    primal_terms.append(np.where(has_l, np.maximum(qp.lower - x, 0.0), 0.0))
    primal_terms.append(np.where(has_u, np.maximum(x - qp.upper, 0.0), 0.0))
    primal = max((float(t.max()) for t in primal_terms if t.size), default=0.0)

    gap_l = np.where(has_l, x - qp.lower, 0.0)
    gap_u = np.where(has_u, qp.upper - x, 0.0)
    comp_terms = [np.abs(gap_l * zl), np.abs(gap_u * zu), np.maximum(-zl, 0.0), np.maximum(-zu, 0.0)]
    complementarity = max((float(t.max()) for t in comp_terms if t.size), default=0.0)

    return KktResiduals(primal=primal, stationarity=stationarity, complementarity=complementarity)


def _check_convex(qp: QuadraticProgram):
    h = qp.hessian
    if h.shape != (qp.n, qp.n):
        raise ValueError(f"hessian shape {h.shape} does not match {qp.n} variables")
    diag = h.diagonal()
    if np.any(diag < 0):
        raise NonConvex(f"negative curvature on variable {int(np.argmin(diag))}")
    off = h - sp.diags(diag)
    if off.count_nonzero():
        dense = h.toarray()
        eigs = np.linalg.eigvalsh(0.5 * (dense + dense.T))
        if eigs[0] < -1e-12 * max(1.0, abs(eigs[-1])):
            raise NonConvex(f"hessian has negative eigenvalue {eigs[0]:.3e}")


def phase_one_violation(qp: QuadraticProgram) -> float:
    """
    Minimum total equality violation Σ|Ax - b| over the box, from a linear
    program. Zero means the constraint set is nonempty.
    """
    n, m = qp.n, qp.m
    if m == 0:
        return 0.0
    eye = sp.identity(m, format="csr")
    a_eq = sp.hstack([qp.eq_matrix, eye, -eye], format="csr")
    cost = np.r_[np.zeros(n), np.ones(2 * m)]
    bounds = [
        (None if not math.isfinite(lo) else lo, None if not math.isfinite(hi) else hi)
        for lo, hi in zip(qp.lower, qp.upper)
    ] + [(0.0, None)] * (2 * m)
    res = linprog(cost, A_eq=a_eq, b_eq=qp.eq_rhs, bounds=bounds, method="highs")
    if res.status != 0:
        logger.warning(f"phase-one LP ended with status {res.status}: {res.message}")
        return math.inf
    return float(res.fun)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-v[neg] / dv[neg]))


def _initial_point(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    x = np.zeros(lo.shape[0])
    both = np.isfinite(lo) & np.isfinite(hi)
    only_l = np.isfinite(lo) & ~np.isfinite(hi)
    only_u = ~np.isfinite(lo) & np.isfinite(hi)
    x[both] = 0.5 * (lo[both] + hi[both])
    x[only_l] = np.maximum(0.0, lo[only_l] + 1.0)
    x[only_u] = np.minimum(0.0, hi[only_u] - 1.0)
    return x


def _kkt_matrix(h: sp.csr_matrix, a: sp.csr_matrix, diag: np.ndarray, delta: float) -> sp.csc_matrix:
    """[[H + diag, Aᵀ], [A, -δI]]"""
    top = h + sp.diags(diag)
    if a.shape[0] == 0:
        return sp.csc_matrix(top)
    corner = -delta * sp.identity(a.shape[0], format="csr") if delta else None
    return sp.bmat([[top, a.T], [a, corner]], format="csc")


def _give_up(qp: QuadraticProgram, result: QpResult, settings: SolverSettings, reason: str):
    violation = phase_one_violation(qp)
    feasibility_tol = 10.0 * settings.qp_tolerance * (1.0 + float(np.max(np.abs(qp.eq_rhs), initial=0.0)))
    if violation > feasibility_tol:
        raise Infeasible(
            f"constraints cannot be met: total violation at least {violation:.6g} ({reason})",
            violation=violation,
            solution=result,
        )
    raise IterLimit(f"interior point stopped without certificate: {reason}", solution=result)


def solve_qp(qp: QuadraticProgram, settings: Optional[SolverSettings] = None) -> QpResult:
    """
    Returns a KKT-certified minimizer. Raises Infeasible when the phase-one
    LP proves the constraints inconsistent, IterLimit otherwise.
    """
    settings = settings or get_settings()
    _check_convex(qp)
    n, m0 = qp.n, qp.m

    crossed = np.flatnonzero(qp.lower > qp.upper)
    if crossed.size:
        gap = float(np.max(qp.lower[crossed] - qp.upper[crossed]))
        raise Infeasible(f"{crossed.size} variables have lower bound above upper bound", violation=gap)

    # Variables with l == u become equality rows.
    fixed = np.isfinite(qp.lower) & (qp.lower == qp.upper)
    fixed_idx = np.flatnonzero(fixed)
    pin_rows = sp.csr_matrix(
        (np.ones(fixed_idx.size), (np.arange(fixed_idx.size), fixed_idx)), shape=(fixed_idx.size, n)
    )
    a = sp.vstack([qp.eq_matrix, pin_rows], format="csr")
    b = np.r_[qp.eq_rhs, qp.lower[fixed_idx]]
    m = a.shape[0]
    lo = np.where(fixed, -np.inf, qp.lower)
    hi = np.where(fixed, np.inf, qp.upper)
    has_l = np.isfinite(lo)
    has_u = np.isfinite(hi)
    n_comp = int(has_l.sum() + has_u.sum())

    magnitude = max(
        1.0,
        float(np.max(np.abs(qp.linear), initial=0.0)),
        float(np.max(np.abs(qp.hessian.data), initial=0.0)),
    )
    scale = 1.0 / magnitude
    h = (qp.hessian * scale).tocsr()
    c = qp.linear * scale

    x = _initial_point(lo, hi)
    y = np.zeros(m)
    zl = np.where(has_l, 1.0, 0.0)
    zu = np.where(has_u, 1.0, 0.0)

    def pack(x, y, zl, zu, iterations, status):
        eq_dual = y[:m0] / scale
        pin_dual = y[m0:] / scale
        lower_dual = zl / scale
        upper_dual = zu / scale
        lower_dual[fixed_idx] = np.maximum(-pin_dual, 0.0)
        upper_dual[fixed_idx] = np.maximum(pin_dual, 0.0)
        return QpResult(
            x=x.copy(),
            eq_dual=eq_dual,
            lower_dual=lower_dual,
            upper_dual=upper_dual,
            objective=qp.objective(x),
            iterations=iterations,
            residuals=kkt_residuals(qp, x, eq_dual, lower_dual, upper_dual),
            status=status,
        )

    best_merit = math.inf
    stalled = 0
    for iteration in range(settings.qp_max_iterations + 1):
        sl = np.where(has_l, x - lo, 1.0)
        su = np.where(has_u, hi - x, 1.0)
        r_d = h @ x + c + a.T @ y - zl + zu
        r_p = a @ x - b

        primal = float(np.max(np.abs(r_p), initial=0.0))
        stationarity = float(np.max(np.abs(r_d), initial=0.0)) / scale
        comp = float(np.max(np.r_[sl * zl, su * zu] * np.r_[has_l, has_u], initial=0.0)) / scale
        logger.debug(
            f"IPM iteration {iteration}: primal {primal:.2e}, dual {stationarity:.2e}, comp {comp:.2e}"
        )
        if (primal <= settings.qp_tolerance and stationarity <= settings.qp_dual_tolerance
                and comp <= settings.qp_dual_tolerance):
            result = pack(x, y, zl, zu, iteration, "optimal")
            logger.debug(f"IPM converged in {iteration} iterations, objective {result.objective:.8g}")
            return result

        merit = max(primal, stationarity, comp)
        if merit < 0.5 * best_merit:
            best_merit = merit
            stalled = 0
        else:
            stalled += 1
        if stalled >= STAGNATION_WINDOW or not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > 1e12:
            _give_up(qp, pack(x, y, zl, zu, iteration, "stalled"), settings, f"stalled at iteration {iteration}")
        if iteration == settings.qp_max_iterations:
            break

        mu = float((sl[has_l] @ zl[has_l] + su[has_u] @ zu[has_u]) / n_comp) if n_comp else 0.0
        sigma_diag = np.where(has_l, zl / sl, 0.0) + np.where(has_u, zu / su, 0.0)
        newton = _kkt_matrix(h, a, sigma_diag, 0.0)
        regularized = _kkt_matrix(h, a, sigma_diag + PRIMAL_REGULARIZATION, DUAL_REGULARIZATION)
        try:
            lu = splu(regularized)
        except RuntimeError as e:
            _give_up(qp, pack(x, y, zl, zu, iteration, "singular"), settings, f"KKT factorization failed: {e}")

        def direction(rc_l, rc_u):
            r1 = -r_d + np.where(has_l, rc_l / sl, 0.0) - np.where(has_u, rc_u / su, 0.0)
            rhs = np.r_[r1, -r_p]
            sol = lu.solve(rhs)
            for _ in range(REFINEMENT_STEPS):
                sol = sol + lu.solve(rhs - newton @ sol)
            dx, dy = sol[:n], sol[n:]
            dzl = np.where(has_l, (rc_l - zl * dx) / sl, 0.0)
            dzu = np.where(has_u, (rc_u + zu * dx) / su, 0.0)
            return dx, dy, dzl, dzu

        def step_bound(dx, dzl, dzu):
            return min(
                _max_step(sl[has_l], dx[has_l]),
                _max_step(su[has_u], -dx[has_u]),
                _max_step(zl[has_l], dzl[has_l]),
                _max_step(zu[has_u], dzu[has_u]),
            )

        # predictor
        dx_a, _, dzl_a, dzu_a = direction(
            np.where(has_l, -sl * zl, 0.0), np.where(has_u, -su * zu, 0.0)
        )
        if n_comp:
            alpha_a = min(1.0, step_bound(dx_a, dzl_a, dzu_a))
            mu_aff = float(
                ((sl + alpha_a * dx_a)[has_l] @ (zl + alpha_a * dzl_a)[has_l]
                 + (su - alpha_a * dx_a)[has_u] @ (zu + alpha_a * dzu_a)[has_u]) / n_comp
            )
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        else:
            sigma = 0.0

        # corrector
        rc_l = np.where(has_l, sigma * mu - sl * zl - dx_a * dzl_a, 0.0)
        rc_u = np.where(has_u, sigma * mu - su * zu + dx_a * dzu_a, 0.0)
        dx, dy, dzl, dzu = direction(rc_l, rc_u)
        alpha = min(1.0, STEP_TO_BOUNDARY * step_bound(dx, dzl, dzu)) if n_comp else 1.0

        x = x + alpha * dx
        y = y + alpha * dy
        zl = zl + alpha * dzl
        zu = zu + alpha * dzu

    _give_up(
        qp,
        pack(x, y, zl, zu, settings.qp_max_iterations, "iteration_limit"),
        settings,
        f"no convergence in {settings.qp_max_iterations} iterations",
    )
