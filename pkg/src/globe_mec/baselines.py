"""Benchmark policies sharing the controller interface.

* SO-NG: GLOBE with every candidate set cut down to the home BS.
* MO-G: myopic per-slot cost minimisation with load balancing and grid purchase.
* MO-NG: each BS greedily serves its own users from its battery, no grid.

MO-G may spend same-slot purchases (``E <= B + g``), so evaluation flags
causality for it by design; only GLOBE and SO-NG assert the battery bounds.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .controller import GlobePolicy, Policy
from .model import GlobeParams, NetworkConfig, SlotDecision, SlotObservation


class SoNgPolicy(GlobePolicy):
    name = "so_ng"

    def __init__(self, config: NetworkConfig, params: GlobeParams, theta=None):
        super().__init__(config.without_glb(), params, theta)


def so_ng_step(config, level, obs, params):
    """One SO-NG decision from a fresh (cold-start) controller."""
    return SoNgPolicy(config, params).decide(level, obs)


class MoGPolicy(Policy):
    """Myopic LP over routing, admission and a fractional grid purchase."""

    name = "mo_g"

    def __init__(self, config: NetworkConfig):
        self.config = config
        cfg = config
        U, N = cfg.n_users, cfg.n_bs
        self._uu, self._jj = np.nonzero(cfg.candidates)
        K = len(self._uu)
        self._K = K
        # variable layout: alpha (K) | beta (K) | g (N)
        nvar = 2 * K + N
        rows = []
        for u in range(U):
            r = np.zeros(nvar)
            r[:K][self._uu == u] = 1.0
            rows.append(r)
        for u in range(U):
            r = np.zeros(nvar)
            r[K:2 * K][self._uu == u] = 1.0
            rows.append(r)
        for j in range(N):
            r = np.zeros(nvar)
            r[K:2 * K][self._jj == j] = 1.0
            rows.append(r)
        self._A_static = np.array(rows)
        self._nvar = nvar

    def decide(self, level, obs: SlotObservation) -> SlotDecision:
        cfg = self.config
        U, N, K = cfg.n_users, cfg.n_bs, self._K
        uu, jj = self._uu, self._jj
        # energy rows: sum_u p_ju alpha_uj + ept_j sum_u beta_uj - g_j <= B_j
        A_en = np.zeros((N, self._nvar))
        A_en[jj, np.arange(K)] = obs.tx_energy[jj, uu]
        A_en[jj, K + np.arange(K)] = cfg.energy_per_task[jj]
        A_en[np.arange(N), 2 * K + np.arange(N)] = -1.0
        A = np.vstack([self._A_static, A_en])
        b = np.concatenate([obs.tx_demand, obs.comp_demand, cfg.capacity,
                            np.maximum(np.asarray(level, float), 0.0)])
        c = np.concatenate([-cfg.c_tx[uu], -cfg.c_com[uu], np.full(N, obs.price)])
        bounds = [(0, None)] * (2 * K) + [(0, cfg.grid_cap)] * N
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"MO-G LP failed: {res.message}")
        x = np.maximum(res.x, 0.0)
        alpha = np.zeros((U, N))
        beta = np.zeros((U, N))
        alpha[uu, jj] = x[:K]
        beta[uu, jj] = x[K:2 * K]
        alpha, beta = _clip_demands(alpha, beta, obs, cfg)
        g = np.minimum(x[2 * K:], cfg.grid_cap)
        return SlotDecision(alpha=alpha, beta=beta, harvest=obs.harvest.copy(), purchase=g)


def _clip_demands(alpha, beta, obs, cfg):
    """Remove LP round-off above the demand and capacity rows."""
    for arr, cap in ((alpha, obs.tx_demand), (beta, obs.comp_demand)):
        s = arr.sum(axis=1)
        over = s > cap
        if over.any():
            arr[over] *= (cap[over] / s[over])[:, None]
    load = beta.sum(axis=0)
    over = load > cfg.capacity
    if over.any():
        beta[:, over] *= cfg.capacity[over] / load[over]
    return alpha, beta


def mo_g_step(config, level, obs):
    return MoGPolicy(config).decide(level, obs)


class MoNgPolicy(Policy):
    """Per-BS greedy service by drop cost per joule, no load balancing, no grid."""

    name = "mo_ng"

    def __init__(self, config: NetworkConfig):
        self.config = config

    def decide(self, level, obs: SlotObservation) -> SlotDecision:
        cfg = self.config
        U, N = cfg.n_users, cfg.n_bs
        alpha = np.zeros((U, N))
        beta = np.zeros((U, N))
        for i in range(N):
            users = cfg.users_of(i)
            if len(users) == 0:
                continue
            a, b = greedy_serve(
                budget=max(float(level[i]), 0.0), capacity=float(cfg.capacity[i]),
                tx_demand=obs.tx_demand[users], tx_energy=obs.tx_energy[i, users],
                c_tx=cfg.c_tx[users], comp_demand=obs.comp_demand[users],
                task_energy=float(cfg.energy_per_task[i]), c_com=cfg.c_com[users])
            alpha[users, i] = a
            beta[users, i] = b
        return SlotDecision(alpha=alpha, beta=beta, harvest=obs.harvest.copy(),
                            purchase=np.zeros(N))


def greedy_serve(budget, capacity, tx_demand, tx_energy, c_tx, comp_demand,
                 task_energy, c_com):
    """Serve traffic and tasks in decreasing drop cost per joule.

    Stops when the energy ``budget`` runs out; tasks additionally share
    ``capacity``. Returns served amounts ``(tx, comp)`` per user.
    """
    n = len(tx_demand)
    served_tx = np.zeros(n)
    served_comp = np.zeros(n)
    items = [(c_tx[k] / tx_energy[k], 0, k) for k in range(n)]
    if task_energy > 0:
        items += [(c_com[k] / task_energy, 1, k) for k in range(n)]
    else:
        items += [(np.inf, 1, k) for k in range(n)]
    # stable order: higher value per joule first, traffic before tasks on ties
    items.sort(key=lambda it: (-it[0], it[1], it[2]))
    energy = budget
    cap_left = capacity
    for _, kind, k in items:
        if kind == 0:
            amount = min(tx_demand[k], energy / tx_energy[k])
            served_tx[k] = amount
            energy -= amount * tx_energy[k]
        else:
            amount = min(comp_demand[k], cap_left)
            if task_energy > 0:
                amount = min(amount, energy / task_energy)
            served_comp[k] = amount
            cap_left -= amount
            energy -= amount * task_energy
        energy = max(energy, 0.0)
    return served_tx, served_comp


def mo_ng_step(config, level, obs):
    return MoNgPolicy(config).decide(level, obs)


def make_policy(name: str, config: NetworkConfig, params: GlobeParams | None = None,
                theta=None) -> Policy:
    if name == "globe":
        return GlobePolicy(config, params, theta)
    if name == "so_ng":
        return SoNgPolicy(config, params, theta)
    if name == "mo_g":
        return MoGPolicy(config)
    if name == "mo_ng":
        return MoNgPolicy(config)
    raise ValueError(f"unknown policy {name!r}; choose globe, so_ng, mo_g or mo_ng")


POLICIES = ("globe", "so_ng", "mo_g", "mo_ng")
