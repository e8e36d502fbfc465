"""Command line: ``globe-mec {run,sweep,snapshot,convergence,trace}``.

Outputs go to ``--out`` or, when omitted, to ``$GLOBE_MEC_OUT`` (default
``./out``). Exit codes: 0 success, 2 invalid configuration or arguments,
3 battery capacity too small for the requested V, 4 battery invariant broken.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from ..baselines import POLICIES
from ..controller import CausalityViolation, ChannelBoundViolation
from ..env import TraceError, read_trace, write_trace
from ..model import BatteryBoundError
from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config, load_preset

OUT_ENV = "GLOBE_MEC_OUT"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> ExperimentConfig:
    cfg = load_preset() if args.config is None else load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "horizon", None) is not None:
        changes["horizon"] = args.horizon
    return cfg.replace(**changes) if changes else cfg


def _values(text: str, axis: str):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if axis == "grid_price_mean" and tok.lower() == ex.NO_GRID:
            out.append(None)
        else:
            out.append(float(tok))
    return out


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    res = ex.run(cfg, args.policy, record=args.record)
    stem = f"{args.policy}_seed{cfg.seed}"
    ex.write_metrics(out / f"{stem}_metrics.csv", res)
    summary = ex.run_summary(res, cfg.burn_in)
    ex.write_json(out / f"{stem}_summary.json", summary)
    if args.record:
        ex.write_decisions(out / f"{stem}_decisions.npz", res)
    print(f"{args.policy}: mean cost {summary['mean_cost']:.6g}, "
          f"mean battery {summary['mean_battery']:.6g} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    rows = ex.sweep(cfg, args.axis, _values(args.values, args.axis), args.replicates,
                    args.policy, workers=args.workers)
    path = out / f"sweep_{args.axis}_{args.policy}.csv"
    ex.write_sweep(path, rows)
    print(f"wrote {path}")
    return 0


def cmd_snapshot(args) -> int:
    out = _out_dir(args)
    try:
        snap = ex.snapshot(args.dump, args.slot)
    except IndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    path = out / f"snapshot_t{args.slot}.csv"
    ex.write_snapshot(path, snap)
    print(f"wrote {path}")
    return 0


def cmd_convergence(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    dump = [int(s) for s in args.dump_slots.split(",")] if args.dump_slots else [0]
    study = ex.convergence(cfg, args.slots, dump_slots=dump)
    ex.write_convergence_summary(out / "convergence_slots.csv", study)
    for (k, tag), (hist, qp, lp) in sorted(study.histories.items()):
        ex.write_convergence(out / f"convergence_t{study.slots[k]}_{tag}.csv", hist, qp, lp)
    within = study.fraction_within(args.tol)
    print(f"{within:.2%} of {args.slots} slots within {args.tol:g} x capacity; "
          f"median iterations warm {np.median(study.iters_warm):g}, "
          f"cold {np.median(study.iters_cold):g}")
    return 0


def cmd_trace(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    if args.trace_cmd == "record":
        _, env, _ = cfg.build()
        path = out / f"trace_seed{cfg.seed}.csv"
        write_trace(path, env.record(cfg.horizon))
        print(f"wrote {path}")
        return 0
    trace = read_trace(args.trace)
    net = cfg.network()
    shape = trace.data.tx_energy.shape[1:]
    if shape != (net.n_bs, net.n_users):
        raise TraceError(f"trace is for {shape[0]} BSs and {shape[1]} users, "
                         f"config has {net.n_bs} and {net.n_users}")
    T = len(trace) if args.horizon is None else args.horizon
    res = ex.run(cfg, args.policy, T=T, source=trace)
    stem = f"{args.policy}_replay"
    ex.write_metrics(out / f"{stem}_metrics.csv", res)
    ex.write_json(out / f"{stem}_summary.json", ex.run_summary(res, cfg.burn_in))
    print(f"replayed {T} slots with {args.policy} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="globe-mec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, seed=True, horizon=True):
        sp.add_argument("--config", help="config file (default: bundled paper_vi preset)")
        if seed:
            sp.add_argument("--seed", type=int)
        if horizon:
            sp.add_argument("--horizon", "-T", type=int)
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./out)")

    sp = sub.add_parser("run", help="run one policy and write metrics and a summary")
    common(sp)
    sp.add_argument("--policy", choices=POLICIES, default="globe")
    sp.add_argument("--record", action="store_true", help="also dump per-slot decisions")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="matched-seed sweep over one axis")
    common(sp)
    sp.add_argument("--axis", choices=ex.SWEEP_AXES, required=True)
    sp.add_argument("--values", required=True,
                    help="comma separated; 'none' means no grid on the price axis")
    sp.add_argument("--replicates", type=int, default=5)
    sp.add_argument("--policy", choices=POLICIES, default="globe")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("snapshot", help="offered vs served load at one slot")
    sp.add_argument("--dump", required=True, help="decisions .npz written by run --record")
    sp.add_argument("--slot", type=int, required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_snapshot)

    sp = sub.add_parser("convergence", help="dual convergence study")
    common(sp)
    sp.add_argument("--slots", type=int, default=1000)
    sp.add_argument("--dump-slots", default="", help="slot offsets to dump per iteration")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.set_defaults(func=cmd_convergence)

    sp = sub.add_parser("trace", help="record or replay an observation trace")
    tsub = sp.add_subparsers(dest="trace_cmd", required=True)
    rec = tsub.add_parser("record")
    common(rec)
    rep = tsub.add_parser("replay")
    common(rep, seed=False)
    rep.add_argument("--trace", required=True)
    rep.add_argument("--policy", choices=POLICIES, default="globe")
    sp.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BatteryBoundError as exc:
        print(f"error: {exc}\nbattery_cap must exceed V*c_max + E_max + harvest_cap + "
              "grid_cap for the battery bounds to hold", file=sys.stderr)
        return 3
    except (TraceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CausalityViolation, ChannelBoundViolation) as exc:
        print(f"error: battery invariant broken: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
