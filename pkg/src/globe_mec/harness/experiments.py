"""Experiments behind the command line: runs, sweeps, snapshots, convergence.

Every function takes an :class:`ExperimentConfig` and returns plain data;
the ``write_*`` helpers turn that data into the documented CSV/JSON files.
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from ..baselines import make_policy
from ..comp_lb import (DualState, _respond, comp_coefficients, lp_objective, qp_objective,
                       solve_distributed, candidate_index)
from ..controller import HorizonResult, run_horizon
from ..env import Trace, TraceError
from .config import ExperimentConfig

SWEEP_AXES = ("V", "grid_price_mean", "workload_intensity")
NO_GRID = "none"


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def run(cfg: ExperimentConfig, policy: str = "globe", seed: int | None = None,
        T: int | None = None, source=None, record: bool = False,
        battery_factor: float | None = None) -> HorizonResult:
    """One horizon of ``policy``; ``source`` overrides the seeded environment."""
    if battery_factor is not None:
        cfg = cfg.replace(battery_factor=battery_factor)
    net, env, params = cfg.build(seed)
    src = env if source is None else source
    T = cfg.horizon if T is None else T
    if isinstance(src, Trace) and T > len(src):
        raise TraceError(f"trace holds {len(src)} slots, horizon {T} requested")
    pol = make_policy(policy, net, params)
    res = run_horizon(net, src, pol, T, initial_battery=cfg.initial_level(net, params),
                      record_decisions=record)
    res.theta = params.theta
    res.meta.update(config_digest=cfg.digest(), env_digest=env.digest,
                    seed=env.seed if source is None else getattr(src, "seed", None),
                    battery_cap=float(net.battery_cap), V=params.V, policy=policy)
    if record:
        blk = src.block(0, T)
        res.meta["offered"] = dict(tx_demand=blk.tx_demand, comp_demand=blk.comp_demand,
                                   home_bs=net.home_bs)
    return res


def effective_burn_in(burn_in: int, T: int) -> int:
    """Burn-in actually discarded: at most half of a short run."""
    return min(burn_in, T // 2)


def run_summary(res: HorizonResult, burn_in: int = 0) -> dict:
    """Summary JSON payload of one run."""
    burn_in = effective_burn_in(burn_in, res.T)
    out = res.summary(burn_in)
    out.update({k: v for k, v in res.meta.items() if k != "offered"})
    out["burn_in"] = burn_in
    out["final_avg_cost"] = float(res.avg_cost[-1])
    out["final_avg_battery"] = float(res.avg_battery[-1])
    return out


def compare(cfg: ExperimentConfig, policies=("globe", "so_ng", "mo_g", "mo_ng"),
            seed: int | None = None, T: int | None = None,
            battery_factor: dict | None = None) -> dict[str, HorizonResult]:
    """Run several policies on one shared trace.

    ``battery_factor`` optionally maps a policy name to a battery capacity
    multiple of GLOBE's requirement.
    """
    T = cfg.horizon if T is None else T
    _, env, _ = cfg.build(seed)
    trace = env.record(T)
    out = {}
    for name in policies:
        bf = (battery_factor or {}).get(name)
        out[name] = run(cfg, name, seed, T, source=trace, battery_factor=bf)
    return out


@dataclass
class SweepRow:
    axis_value: object
    mean_cost: float
    ci95: float
    mean_battery: float
    theta: float
    costs: list
    batteries: list


def _axis_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "V":
        return cfg.replace(V=float(value))
    if axis == "grid_price_mean":
        if value is None or str(value).lower() == NO_GRID:
            return cfg.replace(grid_cap=0.0)
        return cfg.replace(price_mean=float(value))
    if axis == "workload_intensity":
        return cfg.replace(comp_load_target=float(value))
    raise ValueError(f"unknown sweep axis {axis!r}; choose one of {', '.join(SWEEP_AXES)}")


def _sweep_point(args):
    cfg, policy, seed, T, burn_in = args
    res = run(cfg, policy, seed, T)
    burn_in = effective_burn_in(burn_in, res.T)
    return res.mean_cost(burn_in), res.mean_battery(burn_in), float(res.theta)


def sweep(cfg: ExperimentConfig, axis: str, values, replicates: int = 5,
          policy: str = "globe", T: int | None = None, seeds=None,
          workers: int = 1) -> list[SweepRow]:
    """Matched-seed sweep: replicate ``r`` of every value uses the same seed."""
    values = list(values)
    if len(values) < 2:
        raise ValueError("a sweep needs at least two axis values")
    T = cfg.horizon if T is None else T
    seeds = list(range(cfg.seed, cfg.seed + replicates)) if seeds is None else list(seeds)
    jobs = [(_axis_config(cfg, axis, v), policy, s, T, cfg.burn_in)
            for v in values for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows = []
    n = len(seeds)
    for k, v in enumerate(values):
        chunk = results[k * n:(k + 1) * n]
        costs = [c for c, _, _ in chunk]
        bats = [b for _, b, _ in chunk]
        ci = (float(stats.t.ppf(0.975, n - 1) * np.std(costs, ddof=1) / np.sqrt(n))
              if n > 1 else 0.0)
        rows.append(SweepRow(v, float(np.mean(costs)), ci, float(np.mean(bats)),
                             chunk[0][2], costs, bats))
    return rows


def write_sweep(path, rows: list[SweepRow]):
    """CSV ``axis_value,mean_cost,ci95,mean_battery,theta``."""
    lines = ["axis_value,mean_cost,ci95,mean_battery,theta"]
    for r in rows:
        v = NO_GRID if r.axis_value is None else r.axis_value
        lines.append(f"{v},{r.mean_cost:.10g},{r.ci95:.10g},{r.mean_battery:.10g},"
                     f"{r.theta:.10g}")
    atomic_write(path, "\n".join(lines) + "\n")


def write_decisions(path, res: HorizonResult):
    """Save the per-slot decision dump used by :func:`snapshot`."""
    if res.decisions is None:
        raise ValueError("run was not recorded; pass record=True")
    off = res.meta["offered"]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, battery=res.battery, home_bs=off["home_bs"],
                        tx_demand=off["tx_demand"], comp_demand=off["comp_demand"],
                        **res.decisions)


def snapshot(dump, t: int) -> dict:
    """Per-BS offered versus served load at slot ``t`` plus battery levels.

    ``dump`` is a path to a decision dump or an already loaded mapping.
    Offered load counts each user at its home BS; served load is what each
    BS actually carries after load balancing.
    """
    d = np.load(dump) if isinstance(dump, (str, os.PathLike)) else dump
    T = d["alpha"].shape[0]
    if not 0 <= t < T:
        raise IndexError(f"slot {t} out of range; the dump holds slots 0..{T - 1}")
    home = d["home_bs"]
    N = d["alpha"].shape[2]
    offered_tx = np.bincount(home, weights=d["tx_demand"][t], minlength=N)
    offered_comp = np.bincount(home, weights=d["comp_demand"][t], minlength=N)
    return dict(bs=np.arange(N), offered_tx=offered_tx, served_tx=d["alpha"][t].sum(axis=0),
                offered_comp=offered_comp, served_comp=d["beta"][t].sum(axis=0),
                battery=d["battery"][t])


def write_snapshot(path, snap: dict):
    """CSV ``bs,offered_tx,served_tx,offered_comp,served_comp,battery``."""
    keys = ["bs", "offered_tx", "served_tx", "offered_comp", "served_comp", "battery"]
    lines = [",".join(keys)]
    for i in range(len(snap["bs"])):
        lines.append(",".join([str(int(snap["bs"][i]))]
                              + [f"{float(snap[k][i]):.10g}" for k in keys[1:]]))
    atomic_write(path, "\n".join(lines) + "\n")


@dataclass
class ConvergenceStudy:
    """Per-slot outcome of re-solving the computation problem cold and warm."""

    slots: np.ndarray
    iters_cold: np.ndarray
    iters_warm: np.ndarray
    viol_cold: np.ndarray       # max capacity violation / capacity
    viol_warm: np.ndarray
    converged_cold: np.ndarray
    converged_warm: np.ndarray
    capacity: np.ndarray
    histories: dict             # slot -> (history rows, qp, lp) for dumped slots

    def fraction_within(self, tol: float = 1e-6, which: str = "warm") -> float:
        v = self.viol_warm if which == "warm" else self.viol_cold
        c = self.converged_warm if which == "warm" else self.converged_cold
        return float(np.mean((v <= tol) & c))


def iteration_objectives(base, candidates, lam, cap, eps, history):
    """QP and LP objectives of the user responses to each recorded ``gamma``."""
    cidx, ccount = candidate_index(candidates)
    U, N = base.shape
    beta = np.zeros((U, N))
    load = np.zeros(N)
    K = cidx.shape[1]
    bufs = (np.empty(K), np.empty(K), np.empty(K))
    qp = np.empty(len(history))
    lp = np.empty(len(history))
    for k, row in enumerate(history):
        beta[:] = 0.0
        _respond(base, cidx, ccount, lam, eps, np.ascontiguousarray(row[:N]), beta, load,
                 *bufs)
        qp[k] = qp_objective(base, beta, eps)
        lp[k] = lp_objective(base, beta)
    return qp, lp


def convergence(cfg: ExperimentConfig, n_slots: int = 1000, seed: int | None = None,
                start: int | None = None, dump_slots=()) -> ConvergenceStudy:
    """Run GLOBE, then re-solve each slot's computation problem cold and warm.

    Battery states come from the GLOBE run, so the problems are the ones the
    controller faced. The warm chain carries multipliers slot to slot exactly
    as the controller does; the cold solve starts every slot from zero.
    """
    start = cfg.burn_in if start is None else start
    net, env, params = cfg.build(seed)
    pol = make_policy("globe", net, params)
    res = run_horizon(net, env, pol, start + n_slots,
                      initial_battery=cfg.initial_level(net, params))
    cold_params = params
    state = DualState.zeros(net.n_bs)
    out = {k: np.zeros(n_slots) for k in ("ic", "iw", "vc", "vw")}
    cc = np.zeros(n_slots, bool)
    cw = np.zeros(n_slots, bool)
    histories = {}
    dump_slots = set(dump_slots)
    # warm chain from the start of the run so its multipliers match the controller's
    for t in range(start + n_slots):
        obs = env.observation(t)
        bt = res.battery[t] - params.theta
        k = t - start
        rec = k in dump_slots
        _, rw = solve_distributed(net, bt, obs, params, state, record=rec)
        if k < 0:
            continue
        _, rc = solve_distributed(net, bt, obs, cold_params, None, record=rec)
        out["ic"][k], out["iw"][k] = rc.iterations, rw.iterations
        out["vc"][k] = rc.max_violation / net.capacity.min()
        out["vw"][k] = rw.max_violation / net.capacity.min()
        cc[k], cw[k] = rc.converged, rw.converged
        if rec:
            base = comp_coefficients(net, bt, params.V)
            for tag, rep in (("cold", rc), ("warm", rw)):
                qp, lp = iteration_objectives(base, net.candidates, obs.comp_demand,
                                              net.capacity, params.epsilon, rep.history)
                histories[(k, tag)] = (rep.history, qp, lp)
    return ConvergenceStudy(np.arange(start, start + n_slots), out["ic"].astype(int),
                            out["iw"].astype(int), out["vc"], out["vw"], cc, cw,
                            net.capacity.copy(), histories)


def write_convergence(path, history, qp, lp):
    """Per-iteration CSV ``k,gamma_1..gamma_N,qp_obj,lp_obj,max_violation``."""
    N = history.shape[1] - 1
    lines = [",".join(["k"] + [f"gamma_{i + 1}" for i in range(N)]
                      + ["qp_obj", "lp_obj", "max_violation"])]
    for k, row in enumerate(history):
        lines.append(",".join([str(k)] + [f"{x:.12g}" for x in row[:N]]
                              + [f"{qp[k]:.12g}", f"{lp[k]:.12g}", f"{row[N]:.12g}"]))
    atomic_write(path, "\n".join(lines) + "\n")


def write_convergence_summary(path, study: ConvergenceStudy):
    """Per-slot CSV of cold and warm iteration counts and violations."""
    lines = ["t,iters_cold,iters_warm,violation_cold,violation_warm,converged_cold,"
             "converged_warm"]
    for k, t in enumerate(study.slots):
        lines.append(f"{t},{study.iters_cold[k]},{study.iters_warm[k]},"
                     f"{study.viol_cold[k]:.6g},{study.viol_warm[k]:.6g},"
                     f"{int(study.converged_cold[k])},{int(study.converged_warm[k])}")
    atomic_write(path, "\n".join(lines) + "\n")


def write_json(path, payload: dict):
    atomic_write(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def write_metrics(path, res: HorizonResult):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        res.write_csv(tmp)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
