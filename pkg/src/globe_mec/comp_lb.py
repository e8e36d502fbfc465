"""Computation load balancing via the regularized QP.

The per-slot problem is

    max_beta  sum_{u,j} c_uj * beta_uj - beta_uj**2 / (2 eps)
    s.t.      sum_j beta_uj <= lambda_u,   sum_u beta_uj <= cap_j,   beta >= 0

with ``c_uj = V*c_com[u] + b_tilde[j]*kappa*f_j**2``. Relaxing the capacity
rows with multipliers ``gamma`` decouples users; each user then solves a
capped-simplex projection in closed form and BSs update ``gamma`` by projected
gradient steps. :func:`solve_centralized` solves the same QP in one shot and
serves as the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import GlobeParams, NetworkConfig, SlotObservation


@njit(cache=True, inline="always")
def _water_fill(c, m, lam, eps, out, work):
    """Maximise ``sum c_a b_a - b_a^2/(2 eps)`` over ``b >= 0, sum b <= lam``.

    Works on the first ``m`` entries of ``c`` and writes ``out[:m]``;
    ``work`` is scratch of length ``>= m``.
    """
    total = 0.0
    for a in range(m):
        if c[a] > 0.0:
            total += c[a]
    if eps * total <= lam:
        for a in range(m):
            out[a] = eps * c[a] if c[a] > 0.0 else 0.0
        return 0.0
    # sum constraint binds: find nu > 0 with sum eps*max(0, c - nu) = lam
    for a in range(m):
        v = c[a]
        b = a
        while b > 0 and work[b - 1] < v:
            work[b] = work[b - 1]
            b -= 1
        work[b] = v
    csum = 0.0
    nu = 0.0
    n_act = 1
    target = lam / eps
    for k in range(m):
        csum += work[k]
        n_act = k + 1
        nu = (csum - target) / n_act
        nxt = work[k + 1] if k + 1 < m else -np.inf
        if nxt <= nu:
            break
    # eps*(c - nu) cancels badly when lam/eps is tiny next to c; writing the
    # active entries around their mean keeps their sum at lam to rounding
    cbar = csum / n_act
    share = lam / n_act
    for a in range(m):
        if c[a] > nu:
            v = eps * (c[a] - cbar) + share
            out[a] = v if v > 0.0 else 0.0
        else:
            out[a] = 0.0
    return nu


def inner_subproblem(coeffs, lam, eps):
    """Unique maximiser of one user's regularized routing problem.

    Returns ``beta_j = eps * max(0, c_j - nu)`` where ``nu >= 0`` is the
    multiplier of the demand cap ``sum_j beta_j <= lam``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    c = np.ascontiguousarray(coeffs, dtype=np.float64).ravel()
    out = np.zeros_like(c)
    if c.size:
        _water_fill(c, c.size, float(lam), float(eps), out, np.empty_like(c))
    return out


def inner_objective(coeffs, beta, eps):
    coeffs, beta = np.asarray(coeffs, float), np.asarray(beta, float)
    return float(np.sum(coeffs * beta - beta**2 / (2 * eps)))


def dual_update(gamma, step, capacity, load):
    """Projected gradient step ``max(0, gamma - step*(capacity - load))``."""
    return np.maximum(0.0, np.asarray(gamma, float) - step * (np.asarray(capacity) - load))


@dataclass
class DualState:
    """Multipliers carried between slots for warm starts.

    ``b_tilde`` is the perturbed battery vector the multipliers were solved
    at; ``None`` until the first solve.
    """

    gamma: np.ndarray
    k: int = 0
    b_tilde: np.ndarray | None = None

    @classmethod
    def zeros(cls, n_bs: int) -> "DualState":
        return cls(np.zeros(n_bs))


@njit(cache=True)
def _shift_warm(gamma, b_tilde, b_prev, ept):
    """Move each positive multiplier by its BS's own coefficient change.

    A BS at capacity keeps the effective price ``coef - gamma`` seen by users
    unchanged, so only demand changes remain to be corrected.
    """
    for j in range(gamma.shape[0]):
        if gamma[j] > 0.0:
            g = gamma[j] + (b_tilde[j] - b_prev[j]) * ept[j]
            gamma[j] = g if g > 0.0 else 0.0


@dataclass
class QpSolveReport:
    iterations: int
    max_violation: float
    rel_violation: float
    qp_objective: float
    lp_objective: float
    converged: bool
    gamma: np.ndarray
    history: np.ndarray | None = None


def comp_coefficients(config: NetworkConfig, b_tilde, V: float) -> np.ndarray:
    """``(U, N)`` coefficients ``V*c_com[u] + b_tilde[j]*kappa*f_j^2``."""
    return V * config.c_com[:, None] + np.asarray(b_tilde)[None, :] * config.energy_per_task[None, :]


def qp_objective(coef, beta, eps) -> float:
    return float(np.sum(coef * beta) - np.sum(beta**2) / (2 * eps))


def lp_objective(coef, beta) -> float:
    return float(np.sum(coef * beta))


def candidate_index(candidates):
    """Padded candidate lists ``(idx, count)`` used by the kernels."""
    cand = np.asarray(candidates, dtype=bool)
    counts = cand.sum(axis=1).astype(np.int64)
    idx = np.full((cand.shape[0], max(int(counts.max()), 1)), -1, dtype=np.int64)
    for u in range(cand.shape[0]):
        nz = np.flatnonzero(cand[u])
        idx[u, :len(nz)] = nz
    return idx, counts


def dual_steps(candidates, eps, scale=1.0) -> np.ndarray:
    """Per-BS step ``scale / (eps * n_j)``; ``n_j`` counts users that may use BS j.

    The dual gradient ``capacity - load`` is Lipschitz with a diagonal bound
    ``eps * n_j``, so ``scale < 2`` keeps the preconditioned iteration stable.
    """
    n = np.maximum(np.asarray(candidates, dtype=bool).sum(axis=0), 1)
    return scale / (eps * n)


@njit(cache=True, inline="always")
def _respond(base, cidx, ccount, lam, eps, gamma, beta, load, cbuf, bbuf, wbuf):
    """Every user's best response to ``gamma``; fills ``beta`` and ``load``."""
    for i in range(load.shape[0]):
        load[i] = 0.0
    for u in range(base.shape[0]):
        m = ccount[u]
        for a in range(m):
            cbuf[a] = base[u, cidx[u, a]] - gamma[cidx[u, a]]
        _water_fill(cbuf, m, lam[u], eps, bbuf, wbuf)
        for a in range(m):
            j = cidx[u, a]
            beta[u, j] = bbuf[a]
            load[j] += bbuf[a]


@njit(cache=True)
def _dual_loop(base, cidx, ccount, lam, cap, eps, gamma, steps, schedule,
               tol_viol, tol_slack, max_iter, beta, hist):
    """Run the broadcast/solve/update iteration in place.

    ``schedule`` is 0 (constant), 1 (diminishing) or 2 (accelerated with
    restart). Multipliers are broadcast, users respond, and each BS applies
    the projected step to its own multiplier. Returns ``(iterations, max
    relative violation, converged)``; on return ``gamma`` is the last
    broadcast point and ``beta`` its response. When ``hist`` has rows, row
    ``k`` receives the broadcast ``gamma`` followed by the max violation.
    """
    N = cap.shape[0]
    K = cidx.shape[1]
    load = np.zeros(N)
    cbuf = np.empty(K)
    bbuf = np.empty(K)
    wbuf = np.empty(K)
    x = gamma.copy()       # last projected iterate
    xnew = np.empty(N)
    y = gamma              # broadcast point, updated in place
    tk = 1.0
    record = hist.shape[0] > 0
    rel = np.inf
    for k in range(max_iter):
        _respond(base, cidx, ccount, lam, eps, y, beta, load, cbuf, bbuf, wbuf)
        rel = 0.0
        absv = 0.0
        for i in range(N):
            v = load[i] - cap[i]
            if v / cap[i] > rel:
                rel = v / cap[i]
            if v > absv:
                absv = v
        if record and k < hist.shape[0]:
            for i in range(N):
                hist[k, i] = y[i]
            hist[k, N] = absv
        scale = 1.0 / math.sqrt(k + 1.0) if schedule == 1 else 1.0
        # projected-gradient residual in units of capacity: |cap - load| where
        # gamma stays positive, gamma / step where the projection is active
        res = 0.0
        for i in range(N):
            g = y[i] - steps[i] * scale * (cap[i] - load[i])
            xnew[i] = g if g > 0.0 else 0.0
            r = abs(xnew[i] - y[i]) / (steps[i] * scale * cap[i])
            if r > res:
                res = r
        if rel <= tol_viol and res <= tol_slack:
            return k + 1, rel, True
        if schedule == 2:
            # restart the momentum when the step opposes the last move
            dot = 0.0
            for i in range(N):
                dot += (y[i] - xnew[i]) * (xnew[i] - x[i]) / steps[i]
            if dot > 0.0:
                tk = 1.0
            tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            mom = (tk - 1.0) / tn
            tk = tn
            for i in range(N):
                yi = xnew[i] + mom * (xnew[i] - x[i])
                y[i] = yi if yi > 0.0 else 0.0
                x[i] = xnew[i]
        else:
            for i in range(N):
                y[i] = xnew[i]
                x[i] = xnew[i]
    # y moved past the last response; refresh beta so they match
    _respond(base, cidx, ccount, lam, eps, y, beta, load, cbuf, bbuf, wbuf)
    return max_iter, rel, False


@njit(cache=True)
def _repair_capacity(beta, cap):
    """Scale down the load received by any over-capacity BS."""
    U, N = beta.shape
    for j in range(N):
        s = 0.0
        for u in range(U):
            s += beta[u, j]
        if s > cap[j]:
            r = cap[j] / s
            for u in range(U):
                beta[u, j] *= r


def solve_distributed(config: NetworkConfig, b_tilde, obs: SlotObservation,
                      params: GlobeParams, state: DualState | None = None,
                      record: bool = False):
    """Dual-decomposition solve of the regularized computation problem.

    ``state`` supplies the starting multipliers and is updated in place when
    warm starts are enabled. Returns ``(beta, report)``; ``beta`` is feasible
    for both demand and capacity constraints.
    """
    d = params.dual
    eps = params.epsilon
    base = np.ascontiguousarray(comp_coefficients(config, b_tilde, params.V))
    cidx, ccount = candidate_index(config.candidates)
    cap = np.ascontiguousarray(config.capacity)
    lam = np.ascontiguousarray(obs.comp_demand, dtype=np.float64)
    if state is not None and d.warm_start:
        gamma = state.gamma.astype(float).copy()
        if d.warm_shift and state.b_tilde is not None:
            _shift_warm(gamma, np.asarray(b_tilde, float), state.b_tilde,
                        np.ascontiguousarray(config.energy_per_task))
    else:
        gamma = np.zeros(config.n_bs)
    steps = dual_steps(config.candidates, eps, d.step_scale)
    beta = np.zeros((config.n_users, config.n_bs))
    hist = np.zeros((d.max_iter if record else 0, config.n_bs + 1))
    iters, rel, converged = _dual_loop(
        base, cidx, ccount, lam, cap, eps, gamma, steps, d.schedule_code,
        d.tol_violation, d.tol_slack, d.max_iter, beta, hist)
    load = beta.sum(axis=0)
    absv = float(max(0.0, np.max(load - cap)))
    _repair_capacity(beta, cap)
    if state is not None:
        state.gamma = gamma.copy()
        state.b_tilde = np.array(b_tilde, dtype=float)
        state.k += iters
    report = QpSolveReport(
        iterations=int(iters), max_violation=absv, rel_violation=float(max(rel, 0.0)),
        qp_objective=qp_objective(base, beta, eps), lp_objective=lp_objective(base, beta),
        converged=bool(converged), gamma=gamma.copy(),
        history=hist[:iters] if record else None)
    return beta, report


def solve_centralized(config: NetworkConfig, b_tilde, obs: SlotObservation,
                      params: GlobeParams, solver: str = "CLARABEL"):
    """Reference optimum of the regularized QP via a generic conic solver.

    Returns ``(beta, qp_objective, lp_objective)``.
    """
    base = comp_coefficients(config, b_tilde, params.V)
    return solve_qp_reference(base, config.candidates, obs.comp_demand, config.capacity,
                              params.epsilon, solver=solver)


def solve_qp_reference(base, candidates, lam, cap, eps, solver="CLARABEL"):
    """Solve the regularized QP with cvxpy on candidate entries only."""
    import cvxpy as cp

    cand = np.asarray(candidates, dtype=bool)
    U, N = cand.shape
    uu, jj = np.nonzero(cand)
    lam = np.asarray(lam, float)
    cap = np.asarray(cap, float)
    beta = np.zeros((U, N))
    if np.all(base[uu, jj] <= 0) or np.all(lam <= 0):
        return beta, 0.0, 0.0
    scale = float(max(cap.max(), lam.max(), 1.0))
    x = cp.Variable(len(uu), nonneg=True)
    row = np.zeros((U, len(uu)))
    row[uu, np.arange(len(uu))] = 1.0
    col = np.zeros((N, len(uu)))
    col[jj, np.arange(len(uu))] = 1.0
    c = base[uu, jj] * scale
    q = scale**2 / (2 * eps)
    obj = cp.Maximize(c @ x - q * cp.sum_squares(x))
    cons = [row @ x <= lam / scale, col @ x <= cap / scale]
    prob = cp.Problem(obj, cons)
    kwargs = {}
    if solver == "CLARABEL":
        kwargs = dict(tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, max_iter=400)
    prob.solve(solver=solver, **kwargs)
    xv = np.maximum(np.asarray(x.value, float), 0.0) * scale
    beta[uu, jj] = xv
    # clamp solver round-off back into the feasible set
    over = beta.sum(axis=1) > lam
    if np.any(over):
        beta[over] *= (lam[over] / beta[over].sum(axis=1))[:, None]
    _repair_capacity(beta, cap)
    return beta, qp_objective(base, beta, eps), lp_objective(base, beta)


def kkt_residuals(coeffs, lam, eps, beta) -> float:
    """Largest KKT residual of one user's capped problem at ``beta``.

    Stationarity uses the multiplier ``nu`` recovered from the active entries.
    """
    c = np.asarray(coeffs, float)
    b = np.asarray(beta, float)
    act = b > 0
    grad = c - b / eps
    nu = float(np.max(grad[act])) if act.any() else 0.0
    nu = max(nu, 0.0)
    stat = np.abs(grad[act] - nu).max(initial=0.0)
    dual_feas = max(0.0, np.max(grad[~act] - nu, initial=-np.inf))
    primal = max(0.0, b.sum() - lam, -b.min(initial=0.0))
    slack = abs(nu * (lam - b.sum()))
    return float(max(stat, dual_feas, primal / max(lam, 1.0), slack))
