import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from globe_mec.baselines import make_policy
from globe_mec.harness import experiments as ex
from globe_mec.harness.cli import main
from globe_mec.harness.config import ConfigError, load_preset, parse_config, preset_path
from globe_mec.model import BatteryBoundError, SlotObservation

PRESET = preset_path().read_text()


def _with(text: str, section: str, line: str) -> str:
    return text.replace(f"[{section}]\n", f"[{section}]\n{line}\n", 1)


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# --- configuration --------------------------------------------------------------

def test_preset_loads_with_derived_battery():
    cfg = load_preset()
    net, env, params = cfg.build()
    assert net.n_bs == 5 and cfg.V == 800.0
    assert net.battery_cap == pytest.approx(params.theta + net.harvest_cap + net.grid_cap)
    assert cfg.initial_level(net, params) == pytest.approx(np.full(5, params.theta))
    assert cfg.digest() == load_preset().digest()
    assert cfg.replace(V=400.0).digest() != cfg.digest()


def test_comp_load_is_scaled_to_target():
    cfg = load_preset()
    env = cfg.build()[1]
    capacity = cfg.cpu_speed / cfg.cycles_per_task - 1 / cfg.delay_bound
    assert env.config.comp_rate.mean() == pytest.approx(cfg.comp_load_target * capacity)


@pytest.mark.parametrize("section,line,field", [
    ("network", "wormholes = 3", "network.wormholes"),
    ("globe", "warm_start = maybe", "globe.warm_start"),
    ("globe", "schedule = adagrad", "globe.schedule"),
    ("arrivals", "tx_rates = 1, 2", "arrivals.tx_rates"),
    ("run", "horizon = 0", "run.horizon"),
    ("network", "n_bs = many", "network.n_bs"),
])
def test_field_level_diagnostics(section, line, field):
    text = PRESET.replace(f"[{section}]\n", f"[{section}]\n{line}\n", 1)
    # drop the preset's own line for the same key so the override is the only one
    key = line.split("=")[0].strip()
    lines = text.splitlines()
    first = next(i for i, ln in enumerate(lines) if ln.strip().startswith(key + " "))
    lines = [ln for i, ln in enumerate(lines) if i == first or not ln.strip().startswith(key + " ")]
    with pytest.raises(ConfigError) as err:
        parse_config("\n".join(lines) + "\n")
    assert field in err.value.errors


def test_unknown_section_and_schema():
    with pytest.raises(ConfigError) as err:
        parse_config(PRESET + "\n[extras]\nx = 1\n")
    assert "extras" in err.value.errors
    with pytest.raises(ConfigError) as err:
        parse_config(PRESET.replace("globe-config/1", "globe-config/9"))
    assert "meta.schema" in err.value.errors


def test_explicit_battery_below_requirement_is_a_bound_error():
    text = PRESET.replace("battery_cap = auto", "battery_cap = 500")
    with pytest.raises(BatteryBoundError):
        parse_config(text)


# --- command line ---------------------------------------------------------------

def test_run_is_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / f"o{k}"
        assert main(["run", "--policy", "globe", "-T", "400", "--seed", "7", "--out", str(d)]) == 0
        s = json.loads((d / "globe_seed7_summary.json").read_text())
        s.pop("wall_time")
        outs.append((s, (d / "globe_seed7_metrics.csv").read_bytes()))
    assert outs[0] == outs[1]
    s = outs[0][0]
    for key in ("mean_cost", "drop_rate_tx", "drop_rate_comp", "config_digest", "final_avg_cost",
                "final_avg_battery", "theta", "battery_cap"):
        assert key in s


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GLOBE_MEC_OUT", str(tmp_path / "envout"))
    assert main(["run", "-T", "50"]) == 0
    assert (tmp_path / "envout" / "globe_seed0_summary.json").exists()


def test_mo_ng_without_energy_drops_everything(tmp_path):
    cfg = tmp_path / "dark.cfg"
    text = PRESET.replace("harvest_high = 80, 10, 10, 10, 10", "harvest_high = 0, 0, 0, 0, 0")
    text = text.replace("initial_battery = theta", "initial_battery = zero")
    cfg.write_text(text)
    assert main(["run", "--config", str(cfg), "--policy", "mo_ng", "-T", "600",
                 "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "mo_ng_seed0_summary.json").read_text())
    assert s["drop_rate_tx"] == 1.0 and s["drop_rate_comp"] == 1.0


def test_invalid_config_exits_with_field_names(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(_with(PRESET, "network", "wormholes = 3"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "network.wormholes" in capsys.readouterr().err


def test_small_battery_exits_citing_the_bound(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(PRESET.replace("battery_cap = auto", "battery_cap = 500"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "battery_cap must exceed" in capsys.readouterr().err


def test_sweep_table(tmp_path):
    assert main(["sweep", "--axis", "V", "--values", "100,400", "--replicates", "2", "-T", "600",
                 "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "sweep_V_globe.csv")
    assert list(rows[0]) == ["axis_value", "mean_cost", "ci95", "mean_battery", "theta"]
    assert float(rows[0]["theta"]) < float(rows[1]["theta"])
    assert float(rows[0]["mean_battery"]) < float(rows[1]["mean_battery"])


def test_price_sweep_accepts_no_grid(tmp_path):
    assert main(["sweep", "--axis", "grid_price_mean", "--values", "none,1", "--replicates", "2",
                 "-T", "300", "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "sweep_grid_price_mean_globe.csv")
    assert rows[0]["axis_value"] == "none"


def test_sweep_needs_two_values(tmp_path, capsys):
    assert main(["sweep", "--axis", "V", "--values", "100", "--out", str(tmp_path)]) == 2


def test_convergence_dump(tmp_path):
    assert main(["convergence", "--slots", "20", "--dump-slots", "0,5",
                 "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "convergence_t505_warm.csv")
    assert list(rows[0])[:2] == ["k", "gamma_1"]
    assert list(rows[0])[-3:] == ["qp_obj", "lp_obj", "max_violation"]
    assert float(rows[-1]["max_violation"]) <= 1e-6 * 2000
    assert (tmp_path / "convergence_t500_cold.csv").exists()
    summary = _read_csv(tmp_path / "convergence_slots.csv")
    assert len(summary) == 20


def test_trace_record_and_replay(tmp_path, capsys):
    assert main(["trace", "record", "-T", "120", "--seed", "3", "--out", str(tmp_path)]) == 0
    trace = tmp_path / "trace_seed3.csv"
    assert main(["trace", "replay", "--trace", str(trace), "--policy", "so_ng",
                 "--out", str(tmp_path / "r")]) == 0
    replayed = (tmp_path / "r" / "so_ng_replay_metrics.csv").read_bytes()
    assert main(["run", "--policy", "so_ng", "-T", "120", "--seed", "3",
                 "--out", str(tmp_path / "live")]) == 0
    assert (tmp_path / "live" / "so_ng_seed3_metrics.csv").read_bytes() == replayed
    assert main(["trace", "replay", "--trace", str(trace), "-T", "121",
                 "--out", str(tmp_path / "r")]) == 2
    assert "121" in capsys.readouterr().err


def test_replay_rejects_mismatched_network(tmp_path):
    assert main(["trace", "record", "-T", "10", "--out", str(tmp_path)]) == 0
    cfg = tmp_path / "six.cfg"
    text = PRESET.replace("n_bs = 5", "n_bs = 6").replace(
        "tx_rates = 3, 0.5, 4, 4, 0.5", "tx_rates = 3, 0.5, 4, 4, 0.5, 1").replace(
        "comp_rates = 0.6, 1.8, 0.6, 1.4, 0.6", "comp_rates = 0.6, 1.8, 0.6, 1.4, 0.6, 1").replace(
        "harvest_high = 80, 10, 10, 10, 10", "harvest_high = 80, 10, 10, 10, 10, 10")
    cfg.write_text(text)
    assert main(["trace", "replay", "--config", str(cfg), "--trace",
                 str(tmp_path / "trace_seed0.csv"), "--out", str(tmp_path)]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "globe_mec", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "snapshot" in out.stdout


# --- snapshots --------------------------------------------------------------------

def _dump_from(net, obs, dec, level):
    return dict(alpha=dec.alpha[None], beta=dec.beta[None], battery=level[None],
                home_bs=net.home_bs, tx_demand=obs.tx_demand[None],
                comp_demand=obs.comp_demand[None])


def test_snapshot_served_load_follows_battery():
    cfg = load_preset()
    net, _, params = cfg.build()
    lam = np.full(net.n_users, 1800.0)
    obs = SlotObservation(np.zeros(net.n_users), lam, np.zeros(5), 1.0,
                          np.where(net.candidates.T, 2.0, np.inf))
    level = params.theta + np.array([-400.0, -200.0, 0.0, 100.0, 150.0])
    dec = make_policy("globe", net, params).decide(level, obs)
    snap = ex.snapshot(_dump_from(net, obs, dec, level), 0)
    assert np.allclose(snap["offered_comp"], 1800.0)
    # richer BSs carry at least as much; saturated ones tie at capacity up to rounding
    served = snap["served_comp"][np.argsort(snap["battery"])]
    assert np.all(np.diff(served) >= -1e-9 * net.capacity.max())
    assert served[-1] > served[0] * 1.5


def test_snapshot_without_balancing_serves_at_home(tmp_path):
    cfg = load_preset()
    res = ex.run(cfg, "so_ng", T=200, record=True)
    ex.write_decisions(tmp_path / "d.npz", res)
    for t in (0, 50, 199):
        snap = ex.snapshot(tmp_path / "d.npz", t)
        assert np.all(snap["served_comp"] <= snap["offered_comp"] * (1 + 1e-9) + 1e-9)
        assert np.all(snap["served_tx"] <= snap["offered_tx"] * (1 + 1e-9) + 1e-9)
        if res.dropped_comp[t] == 0 and res.dropped_tx[t] == 0:
            assert np.allclose(snap["served_comp"], snap["offered_comp"])
            assert np.allclose(snap["served_tx"], snap["offered_tx"])


def test_snapshot_of_empty_slot_is_all_zero():
    cfg = load_preset()
    net, _, params = cfg.build()
    obs = SlotObservation(np.zeros(5), np.zeros(5), np.zeros(5), 1.0,
                          np.where(net.candidates.T, 2.0, np.inf))
    level = np.full(5, params.theta)
    dec = make_policy("globe", net, params).decide(level, obs)
    snap = ex.snapshot(_dump_from(net, obs, dec, level), 0)
    for k in ("offered_tx", "served_tx", "offered_comp", "served_comp"):
        assert not snap[k].any()


def test_snapshot_cli_and_range(tmp_path, capsys):
    assert main(["run", "-T", "30", "--record", "--out", str(tmp_path)]) == 0
    dump = str(tmp_path / "globe_seed0_decisions.npz")
    assert main(["snapshot", "--dump", dump, "--slot", "29", "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "snapshot_t29.csv")
    assert [r["bs"] for r in rows] == ["0", "1", "2", "3", "4"]
    assert main(["snapshot", "--dump", dump, "--slot", "30", "--out", str(tmp_path)]) == 2
    assert "out of range" in capsys.readouterr().err


def test_compare_shares_one_trace():
    cfg = load_preset()
    res = ex.compare(cfg, ("globe", "mo_ng"), T=50)
    assert res["globe"].meta["env_digest"] == res["mo_ng"].meta["env_digest"]
    assert np.array_equal(res["globe"].offered_comp, res["mo_ng"].offered_comp)
