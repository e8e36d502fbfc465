"""Per-slot GLOBE control and horizon runs.

:func:`globe_step` is the readable reference: it calls the three decomposed
solvers and then :func:`~globe_mec.model.evaluate_slot`. :class:`GlobePolicy`
also carries a compiled block kernel built from the same solver primitives;
``run_horizon`` uses it for long runs and the test suite checks that both
paths agree.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .comp_lb import (DualState, QpSolveReport, _dual_loop, _repair_capacity,
                      _shift_warm, candidate_index, dual_steps, solve_distributed)
from .energy_policy import _decide_energy, decide_energy
from .env import ObservationBlock
from .model import (BatteryState, GlobeParams, NetworkConfig, SlotDecision,
                    SlotObservation, SlotOutcome, evaluate_slot)
from .tx_lb import _route_all, route_all


class CausalityViolation(AssertionError):
    """Battery bound or energy causality broken under GLOBE."""


class ChannelBoundViolation(RuntimeError):
    """A realized per-unit transmission energy fell below the configured p_min."""


def _assert_battery_bounds(config, level, outcome, t=None, extra=""):
    bad_c = np.flatnonzero(outcome.causality_violated)
    after = outcome.battery_after
    tol = 1e-9 * max(1.0, config.battery_cap)
    bad_b = np.flatnonzero((after < -tol) | (after > config.battery_cap + tol))
    if len(bad_c) or len(bad_b):
        raise CausalityViolation(
            f"slot {t}: causality broken at BS {bad_c.tolist()}, battery bound broken at "
            f"BS {bad_b.tolist()}; level={level.tolist()} energy={outcome.energy.tolist()} "
            f"after={after.tolist()} {extra}")


def globe_step(config: NetworkConfig, state: BatteryState, obs: SlotObservation,
               params: GlobeParams, dual: DualState | None = None, check: bool = True):
    """One slot of GLOBE.

    Returns ``(decision, outcome, next_state, report)`` where ``report`` is the
    computation solver's :class:`~globe_mec.comp_lb.QpSolveReport`.
    """
    b_tilde = state.perturbed
    _check_channel(config, obs.tx_energy, params.p_min)
    e, g = decide_energy(b_tilde, obs.harvest, obs.price, params.V, config.grid_cap)
    alpha = route_all(params.V, config.c_tx, b_tilde, obs.tx_energy, config.candidates,
                      obs.tx_demand)
    beta, report = solve_distributed(config, b_tilde, obs, params, dual)
    dec = SlotDecision(alpha=alpha, beta=beta, harvest=e, purchase=g)
    out = evaluate_slot(config, obs, dec, state, check=check)
    if check:
        _assert_battery_bounds(config, state.level, out, extra=f"theta={state.theta}")
    return dec, out, BatteryState(out.battery_after, state.theta), report


def _check_channel(config, p, p_min):
    p_c = np.asarray(p).T[config.candidates] if np.ndim(p) == 2 else None
    if p_c is not None and p_c.size and p_c.min() < p_min * (1 - 1e-12):
        raise ChannelBoundViolation(
            f"realized p={p_c.min():.6g} below configured p_min={p_min:.6g}; "
            "the battery-bound guarantee no longer holds")


@njit(cache=True)
def _globe_block(mu, lam, harvest, price, p, level, theta, V, c_tx, c_com, cand,
                 ept, cap, g_max, b_max, eps, cidx, ccount, gamma, steps,
                 schedule, tol_viol, tol_slack, max_iter, warm, shift, bt_prev, p_min,
                 out_cost, out_battery, out_energy, out_drop, out_iters, out_conv,
                 rec_alpha, rec_beta, rec_e, rec_g):
    """GLOBE over a block of slots; returns the index of a failing slot or -1.

    ``out_cost`` columns: tx, comp, grid. ``out_drop`` columns: tx, comp.
    ``out_battery[t]`` is the level at the start of slot t.
    """
    T = mu.shape[0]
    U, N = cand.shape
    bt = np.empty(N)
    e = np.empty(N)
    g = np.empty(N)
    alpha = np.zeros((U, N))
    beta = np.zeros((U, N))
    base = np.empty((U, N))
    hist = np.zeros((0, N + 1))
    record = rec_alpha.shape[0] > 0
    for t in range(T):
        for u in range(U):
            for j in range(N):
                if cand[u, j] and p[t, j, u] < p_min * (1.0 - 1e-12):
                    return t, 1
        for i in range(N):
            out_battery[t, i] = level[i]
            bt[i] = level[i] - theta[i]
        _decide_energy(bt, harvest[t], price[t], V, g_max, e, g)
        _route_all(V, c_tx, bt, p[t], cand, mu[t], alpha)
        for u in range(U):
            for j in range(N):
                base[u, j] = V * c_com[u] + bt[j] * ept[j]
        if not warm:
            for i in range(N):
                gamma[i] = 0.0
        elif shift and not np.isnan(bt_prev[0]):
            _shift_warm(gamma, bt, bt_prev, ept)
        it, rel, conv = _dual_loop(base, cidx, ccount, lam[t], cap, eps, gamma, steps,
                                   schedule, tol_viol, tol_slack, max_iter, beta, hist)
        _repair_capacity(beta, cap)
        for i in range(N):
            bt_prev[i] = bt[i]
        out_iters[t] = it
        out_conv[t] = conv
        ctx = 0.0
        ccom = 0.0
        cgrid = 0.0
        dtx = 0.0
        dcom = 0.0
        for u in range(U):
            sa = 0.0
            sb = 0.0
            for j in range(N):
                sa += alpha[u, j]
                sb += beta[u, j]
            d1 = mu[t, u] - sa
            d2 = lam[t, u] - sb
            if d1 < 0.0:
                d1 = 0.0
            if d2 < 0.0:
                d2 = 0.0
            dtx += d1
            dcom += d2
            ctx += c_tx[u] * d1
            ccom += c_com[u] * d2
        bad = False
        for i in range(N):
            etx = 0.0
            recv = 0.0
            for u in range(U):
                if cand[u, i]:
                    etx += p[t, i, u] * alpha[u, i]
                recv += beta[u, i]
            en = etx + ept[i] * recv
            out_energy[t, i] = en
            cgrid += price[t] * g[i]
            if en > level[i] + 1e-9 * max(1.0, abs(level[i])):
                bad = True
            nb = level[i] - en + e[i] + g[i]
            if nb > b_max:
                nb = b_max
            if nb < -1e-9 * max(1.0, b_max):
                bad = True
            level[i] = nb
        out_cost[t, 0] = ctx
        out_cost[t, 1] = ccom
        out_cost[t, 2] = cgrid
        out_drop[t, 0] = dtx
        out_drop[t, 1] = dcom
        if record:
            for u in range(U):
                for j in range(N):
                    rec_alpha[t, u, j] = alpha[u, j]
                    rec_beta[t, u, j] = beta[u, j]
            for i in range(N):
                rec_e[t, i] = e[i]
                rec_g[t, i] = g[i]
        if bad:
            return t, 2
    return -1, 0


class Policy:
    """Interface shared by GLOBE and the benchmarks."""

    name = "policy"
    # whether battery/causality violations are bugs (asserted) or just flagged
    asserts_bounds = False

    def reset(self):
        pass

    def decide(self, level: np.ndarray, obs: SlotObservation) -> SlotDecision:
        raise NotImplementedError


class GlobePolicy(Policy):
    """GLOBE controller; ``dual`` keeps the multipliers for warm starts."""

    name = "globe"
    asserts_bounds = True

    def __init__(self, config: NetworkConfig, params: GlobeParams,
                 theta: float | np.ndarray | None = None):
        self.config = config
        self.params = params
        self.theta = np.broadcast_to(
            np.asarray(params.theta if theta is None else theta, float), (config.n_bs,)).copy()
        self.dual = DualState.zeros(config.n_bs)
        self.last_report: QpSolveReport | None = None
        self._cidx, self._ccount = candidate_index(config.candidates)
        self._steps = dual_steps(config.candidates, params.epsilon, params.dual.step_scale)

    def reset(self):
        self.dual = DualState.zeros(self.config.n_bs)

    def decide(self, level, obs):
        state = BatteryState(np.asarray(level, float), self.theta)
        b_tilde = state.perturbed
        cfg, prm = self.config, self.params
        _check_channel(cfg, obs.tx_energy, prm.p_min)
        e, g = decide_energy(b_tilde, obs.harvest, obs.price, prm.V, cfg.grid_cap)
        alpha = route_all(prm.V, cfg.c_tx, b_tilde, obs.tx_energy, cfg.candidates,
                          obs.tx_demand)
        beta, self.last_report = solve_distributed(cfg, b_tilde, obs, prm, self.dual)
        return SlotDecision(alpha=alpha, beta=beta, harvest=e, purchase=g)

    def run_block(self, level, block: ObservationBlock, record: bool = False):
        cfg, prm = self.config, self.params
        T, U, N = len(block), cfg.n_users, cfg.n_bs
        level = np.array(level, dtype=float)
        out = dict(cost=np.zeros((T, 3)), battery=np.zeros((T, N)), energy=np.zeros((T, N)),
                   drop=np.zeros((T, 2)), iters=np.zeros(T, np.int64),
                   converged=np.zeros(T, np.bool_))
        R = T if record else 0
        rec = dict(alpha=np.zeros((R, U, N)), beta=np.zeros((R, U, N)),
                   harvest=np.zeros((R, N)), purchase=np.zeros((R, N)))
        d = prm.dual
        gamma = self.dual.gamma.astype(float).copy()
        bt_prev = (np.full(N, np.nan) if self.dual.b_tilde is None
                   else self.dual.b_tilde.astype(float).copy())
        bad_t, kind = _globe_block(
            np.ascontiguousarray(block.tx_demand), np.ascontiguousarray(block.comp_demand),
            np.ascontiguousarray(block.harvest), np.ascontiguousarray(block.price),
            np.ascontiguousarray(block.tx_energy), level, self.theta, prm.V,
            np.ascontiguousarray(cfg.c_tx), np.ascontiguousarray(cfg.c_com),
            np.ascontiguousarray(cfg.candidates),
            np.ascontiguousarray(cfg.energy_per_task), np.ascontiguousarray(cfg.capacity),
            float(cfg.grid_cap), float(cfg.battery_cap), prm.epsilon, self._cidx,
            self._ccount, gamma, self._steps, d.schedule_code, d.tol_violation,
            d.tol_slack, d.max_iter, d.warm_start, d.warm_shift, bt_prev, prm.p_min,
            out["cost"], out["battery"], out["energy"], out["drop"], out["iters"],
            out["converged"], rec["alpha"], rec["beta"], rec["harvest"], rec["purchase"])
        self.dual.gamma = gamma
        if not np.isnan(bt_prev[0]):
            self.dual.b_tilde = bt_prev
        if bad_t >= 0:
            if kind == 1:
                raise ChannelBoundViolation(
                    f"slot {bad_t}: realized p below configured p_min={prm.p_min:.6g}")
            raise CausalityViolation(
                f"slot {bad_t}: battery bound or causality broken; level at slot start="
                f"{out['battery'][bad_t].tolist()} energy={out['energy'][bad_t].tolist()} "
                f"theta={self.theta.tolist()} V={prm.V}")
        return level, out, (rec if record else None)


@dataclass
class HorizonResult:
    """Per-slot series of one run. ``battery[t]`` is the level at the start of slot t."""

    policy: str
    cost_tx: np.ndarray
    cost_comp: np.ndarray
    cost_grid: np.ndarray
    battery: np.ndarray
    energy: np.ndarray
    dropped_tx: np.ndarray
    dropped_comp: np.ndarray
    final_battery: np.ndarray
    causality_violations: int = 0
    iterations: np.ndarray | None = None
    converged: np.ndarray | None = None
    decisions: dict | None = None
    wall_time: float = 0.0
    theta: float | None = None
    meta: dict = field(default_factory=dict)
    offered_tx: np.ndarray | None = None
    offered_comp: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.cost_tx)

    @property
    def total_cost(self) -> np.ndarray:
        return self.cost_tx + self.cost_comp + self.cost_grid

    @property
    def avg_cost(self) -> np.ndarray:
        """Running time-average of the total cost."""
        return np.cumsum(self.total_cost) / np.arange(1, self.T + 1)

    @property
    def avg_battery(self) -> np.ndarray:
        """Running time-average of the network-mean battery level."""
        return np.cumsum(self.battery.mean(axis=1)) / np.arange(1, self.T + 1)

    def mean_cost(self, burn_in: int = 0) -> float:
        return float(self.total_cost[burn_in:].mean())

    def mean_battery(self, burn_in: int = 0) -> float:
        return float(self.battery[burn_in:].mean())

    def summary(self, burn_in: int = 0) -> dict:
        return {
            "policy": self.policy,
            "T": self.T,
            "mean_cost": self.mean_cost(burn_in),
            "mean_cost_tx": float(self.cost_tx[burn_in:].mean()),
            "mean_cost_comp": float(self.cost_comp[burn_in:].mean()),
            "mean_cost_grid": float(self.cost_grid[burn_in:].mean()),
            "mean_battery": self.mean_battery(burn_in),
            "mean_dropped_tx": float(self.dropped_tx[burn_in:].mean()),
            "mean_dropped_comp": float(self.dropped_comp[burn_in:].mean()),
            "drop_rate_tx": _ratio(self.dropped_tx[burn_in:], self.offered_tx, burn_in),
            "drop_rate_comp": _ratio(self.dropped_comp[burn_in:], self.offered_comp, burn_in),
            "causality_violations": int(self.causality_violations),
            "theta": self.theta,
            "wall_time": self.wall_time,
        }

    def write_csv(self, path):
        """Per-slot metrics: ``t,total_cost,c_tx,c_com,c_grid,B_1..B_N,dropped_tx,dropped_comp,avg_cost,avg_B``."""
        N = self.battery.shape[1]
        tot, avg_c, avg_b = self.total_cost, self.avg_cost, self.avg_battery
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "total_cost", "c_tx", "c_com", "c_grid"]
                       + [f"B_{i + 1}" for i in range(N)]
                       + ["dropped_tx", "dropped_comp", "avg_cost", "avg_B"])
            for t in range(self.T):
                w.writerow([t] + [f"{x:.10g}" for x in (tot[t], self.cost_tx[t],
                                                         self.cost_comp[t], self.cost_grid[t])]
                           + [f"{x:.10g}" for x in self.battery[t]]
                           + [f"{x:.10g}" for x in (self.dropped_tx[t], self.dropped_comp[t],
                                                    avg_c[t], avg_b[t])])


def _ratio(dropped, offered, burn_in):
    if offered is None:
        return None
    tot = float(offered[burn_in:].sum())
    return float(dropped.sum()) / tot if tot > 0 else 0.0


def run_horizon(config: NetworkConfig, source, policy: Policy, T: int,
                initial_battery=None, record_decisions: bool = False,
                fast: bool = True, chunk: int = 4096) -> HorizonResult:
    """Run ``policy`` for ``T`` slots of ``source`` (an Environment or Trace)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    N = config.n_bs
    theta = getattr(policy, "theta", None)
    if initial_battery is None:
        level = (np.array(theta, float) if theta is not None
                 else np.zeros(N))
    else:
        level = np.broadcast_to(np.asarray(initial_battery, float), (N,)).copy()
    if np.any(level < 0) or np.any(level > config.battery_cap):
        raise ValueError("initial battery must lie in [0, battery_cap]")
    start = time.perf_counter()
    if fast and hasattr(policy, "run_block"):
        res = _run_fast(config, source, policy, T, level, record_decisions, chunk)
    else:
        res = _run_slow(config, source, policy, T, level, record_decisions)
    res.wall_time = time.perf_counter() - start
    if theta is not None:
        res.theta = float(np.mean(theta))
    return res


def _run_fast(config, source, policy, T, level, record, chunk):
    parts, recs = [], []
    t = 0
    while t < T:
        n = min(chunk, T - t)
        blk = source.block(t, n)
        level, out, rec = policy.run_block(level, blk, record=record)
        out["offered"] = np.stack([blk.tx_demand.sum(axis=1), blk.comp_demand.sum(axis=1)], 1)
        parts.append(out)
        if record:
            recs.append(rec)
        t += n
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    decisions = None
    if record:
        decisions = {k: np.concatenate([r[k] for r in recs]) for k in recs[0]}
    return HorizonResult(
        policy=policy.name, cost_tx=cat["cost"][:, 0], cost_comp=cat["cost"][:, 1],
        cost_grid=cat["cost"][:, 2], battery=cat["battery"], energy=cat["energy"],
        dropped_tx=cat["drop"][:, 0], dropped_comp=cat["drop"][:, 1],
        final_battery=level, iterations=cat["iters"], converged=cat["converged"],
        decisions=decisions, offered_tx=cat["offered"][:, 0], offered_comp=cat["offered"][:, 1])


def _run_slow(config, source, policy, T, level, record):
    N, U = config.n_bs, config.n_users
    cost = np.zeros((T, 3))
    battery = np.zeros((T, N))
    energy = np.zeros((T, N))
    drop = np.zeros((T, 2))
    iters = np.zeros(T, np.int64)
    conv = np.zeros(T, bool)
    rec = (dict(alpha=np.zeros((T, U, N)), beta=np.zeros((T, U, N)),
                harvest=np.zeros((T, N)), purchase=np.zeros((T, N))) if record else None)
    violations = 0
    offered = np.zeros((T, 2))
    for t in range(T):
        obs = source.observation(t)
        offered[t] = obs.tx_demand.sum(), obs.comp_demand.sum()
        battery[t] = level
        dec = policy.decide(level, obs)
        out = evaluate_slot(config, obs, dec, level)
        if policy.asserts_bounds:
            _assert_battery_bounds(config, level, out, t=t)
        violations += int(out.causality_violated.any())
        cost[t] = out.cost_tx.sum(), out.cost_comp.sum(), out.cost_grid.sum()
        energy[t] = out.energy
        drop[t] = out.dropped_tx.sum(), out.dropped_comp.sum()
        report = getattr(policy, "last_report", None)
        if report is not None:
            iters[t] = report.iterations
            conv[t] = report.converged
        if record:
            rec["alpha"][t], rec["beta"][t] = dec.alpha, dec.beta
            rec["harvest"][t], rec["purchase"][t] = dec.harvest, dec.purchase
        level = out.battery_after
    return HorizonResult(
        policy=policy.name, cost_tx=cost[:, 0], cost_comp=cost[:, 1], cost_grid=cost[:, 2],
        battery=battery, energy=energy, dropped_tx=drop[:, 0], dropped_comp=drop[:, 1],
        final_battery=level, causality_violations=violations, iterations=iters,
        converged=conv, decisions=rec, offered_tx=offered[:, 0], offered_comp=offered[:, 1])
