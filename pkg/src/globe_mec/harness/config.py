"""Experiment configuration files.

A config is an INI file with sections ``network``, ``arrivals``, ``energy``,
``channel``, ``globe`` and ``run``. Unknown keys are rejected so typos surface
as errors. See ``presets/paper_vi.cfg`` for every key.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..env import EnvConfig, Environment, config_digest
from ..model import (STEP_SCHEDULES, BatteryBoundError, ConfigurationError, DualSettings,
                     GlobeParams, NetworkConfig, derive_bounds, make_params, min_battery_cap)

CONFIG_SCHEMA = "globe-config/1"


class ConfigError(ValueError):
    """Invalid configuration file; ``errors`` maps ``section.key`` to a message."""

    def __init__(self, errors: dict[str, str]):
        self.errors = errors
        lines = [f"  {k}: {v}" for k, v in errors.items()]
        super().__init__("invalid configuration:\n" + "\n".join(lines))


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


@dataclass(frozen=True)
class ExperimentConfig:
    # network
    n_bs: int = 5
    users_per_bs: int = 1
    neighbors: int = 1
    cpu_speed: float = 2.4e9
    tx_power: float = 1.0
    bandwidth: float = 20e6
    noise: float = 0.01
    data_size: float = 1e8
    cycles_per_task: float = 8e5
    delay_bound: float = 1e-3
    kappa: float = 2.5e-22
    c_tx: float = 10.0
    c_com: float = 0.01
    harvest_cap: float = 10.0
    grid_cap: float = 10.0
    battery_cap: float | None = None  # None: smallest admissible for V
    battery_factor: float = 1.0
    mu_max: float = 20.0
    lambda_max: float = 20.0
    # arrivals (per BS, split evenly across its users)
    tx_rates: tuple = (5.0, 5.0, 5.0, 5.0, 5.0)
    comp_rates: tuple = (5.0, 5.0, 5.0, 5.0, 5.0)
    comp_load_target: float | None = 0.7
    rate_mode: str = "poisson"
    # energy
    price_mean: float = 1.0
    harvest_high: tuple | None = None
    # channel
    snr_home_db: float = 10.0
    snr_neighbor_db: float = 3.0
    snr_floor_db: float = -3.0
    snr_ceil_db: float = 30.0
    shadowing_db: float = 0.0
    n_mc: int = 64
    # globe
    V: float = 10.0
    epsilon: float = 1e7
    step_scale: float = 1.0
    schedule: str = "accelerated"
    tol_violation: float = 1e-6
    tol_slack: float = 1e-6
    max_iter: int = 5000
    warm_start: bool = True
    warm_shift: bool = True
    initial_battery: str = "theta"
    # run
    seed: int = 0
    horizon: int = 10000
    burn_in: int = 500
    source: str = field(default="", compare=False)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def n_users(self) -> int:
        return self.n_bs * self.users_per_bs

    def comp_scale(self) -> float:
        """Factor applied to ``comp_rates`` and ``lambda_max``."""
        if self.comp_load_target is None:
            return 1.0
        cap = self.cpu_speed / self.cycles_per_task - 1.0 / self.delay_bound
        return self.comp_load_target * cap / float(np.mean(self.comp_rates))

    def network(self, battery_cap: float | None = None) -> NetworkConfig:
        N, K = self.n_bs, self.users_per_bs
        U = N * K
        home = np.repeat(np.arange(N), K)
        cand = np.zeros((U, N), dtype=bool)
        for u in range(U):
            for d in range(-self.neighbors, self.neighbors + 1):
                cand[u, (home[u] + d) % N] = True
        scale = self.comp_scale()
        return NetworkConfig(
            cpu_speed=np.full(N, self.cpu_speed), tx_power=np.full(N, self.tx_power),
            home_bs=home, candidates=cand, c_tx=np.full(U, self.c_tx),
            c_com=np.full(U, self.c_com), data_size=np.full(U, self.data_size),
            bandwidth=self.bandwidth, noise=self.noise, cycles_per_task=self.cycles_per_task,
            delay_bound=self.delay_bound, kappa=self.kappa, harvest_cap=self.harvest_cap,
            mu_max=self.mu_max, lambda_max=self.lambda_max * scale, grid_cap=self.grid_cap,
            battery_cap=np.inf if battery_cap is None else battery_cap)

    def env_config(self, seed: int | None = None) -> EnvConfig:
        N, K = self.n_bs, self.users_per_bs
        home = np.repeat(np.arange(N), K)
        snr = np.full((N, N * K), self.snr_neighbor_db)
        snr[home, np.arange(N * K)] = self.snr_home_db
        tx = np.repeat(np.asarray(self.tx_rates, float), K) / K
        comp = np.repeat(np.asarray(self.comp_rates, float), K) / K * self.comp_scale()
        return EnvConfig(
            tx_rate=tx, comp_rate=comp, snr_median_db=snr,
            harvest_high=None if self.harvest_high is None else np.asarray(self.harvest_high),
            price_mean=self.price_mean, rate_mode=self.rate_mode,
            snr_floor_db=self.snr_floor_db, snr_ceil_db=self.snr_ceil_db,
            shadowing_db=self.shadowing_db, n_mc=self.n_mc,
            seed=self.seed if seed is None else seed)

    def dual_settings(self) -> DualSettings:
        return DualSettings(step_scale=self.step_scale, schedule=self.schedule,
                            tol_violation=self.tol_violation, tol_slack=self.tol_slack,
                            max_iter=self.max_iter, warm_start=self.warm_start,
                            warm_shift=self.warm_shift)

    def build(self, seed: int | None = None):
        """Return ``(network, environment, params)`` ready to run."""
        loose = self.network()
        env_loose = Environment(loose, self.env_config(seed))
        p_min, p_max = env_loose.p_bounds()
        c_max, E_max, _, _ = derive_bounds(loose, p_min, p_max)
        need = min_battery_cap(loose, self.V, c_max, E_max)
        b_cap = need * self.battery_factor if self.battery_cap is None else self.battery_cap
        net = loose.replace(battery_cap=b_cap)
        env = Environment(net, self.env_config(seed))
        params = make_params(net, self.V, p_min, p_max, epsilon=self.epsilon,
                             dual=self.dual_settings())
        return net, env, params

    def initial_level(self, net: NetworkConfig, params: GlobeParams) -> np.ndarray:
        mode = self.initial_battery
        if mode == "theta":
            val = params.theta
        elif mode == "zero":
            val = 0.0
        elif mode == "full":
            val = net.battery_cap
        else:
            val = float(mode)
        return np.full(net.n_bs, min(val, net.battery_cap))

    def digest(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("source", None)
        return config_digest(d)


_SECTIONS = {
    "network": ["n_bs", "users_per_bs", "neighbors", "cpu_speed", "tx_power", "bandwidth",
                "noise", "data_size", "cycles_per_task", "delay_bound", "kappa", "c_tx",
                "c_com", "harvest_cap", "grid_cap", "battery_cap", "battery_factor",
                "mu_max", "lambda_max"],
    "arrivals": ["tx_rates", "comp_rates", "comp_load_target", "rate_mode"],
    "energy": ["price_mean", "harvest_high"],
    "channel": ["snr_home_db", "snr_neighbor_db", "snr_floor_db", "snr_ceil_db",
                "shadowing_db", "n_mc"],
    "globe": ["V", "epsilon", "step_scale", "schedule", "tol_violation", "tol_slack",
              "max_iter", "warm_start", "warm_shift", "initial_battery"],
    "run": ["seed", "horizon", "burn_in"],
}


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    if key in ("battery_cap", "comp_load_target"):
        return None if raw.lower() in ("auto", "none", "") else float(raw)
    if key == "harvest_high":
        return None if raw.lower() in ("none", "") else tuple(_floats(raw))
    if key in ("tx_rates", "comp_rates"):
        return tuple(_floats(raw))
    if key in ("rate_mode", "schedule", "initial_battery"):
        return raw
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    return float(raw)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError({"file": str(exc)}) from exc
    defaults = ExperimentConfig()
    values, errors = {}, {}
    for section in cp.sections():
        if section == "meta":
            schema = cp[section].get("schema", CONFIG_SCHEMA)
            if schema != CONFIG_SCHEMA:
                errors["meta.schema"] = f"unsupported schema {schema!r}"
            continue
        if section not in _SECTIONS:
            errors[section] = "unknown section"
            continue
        for key, raw in cp[section].items():
            if key not in _SECTIONS[section]:
                errors[f"{section}.{key}"] = "unknown key"
                continue
            try:
                values[key] = _convert(key, raw, getattr(defaults, key))
            except ValueError as exc:
                errors[f"{section}.{key}"] = str(exc)
    if errors:
        raise ConfigError(errors)
    cfg = defaults.replace(source=source, **values)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    errors = {}
    if cfg.n_bs < 1:
        errors["network.n_bs"] = "must be >= 1"
    if cfg.users_per_bs < 1:
        errors["network.users_per_bs"] = "must be >= 1"
    if cfg.neighbors < 0:
        errors["network.neighbors"] = "must be >= 0"
    for key in ("tx_rates", "comp_rates"):
        if len(getattr(cfg, key)) != cfg.n_bs:
            errors[f"arrivals.{key}"] = f"needs {cfg.n_bs} values (one per BS)"
    if cfg.harvest_high is not None and len(cfg.harvest_high) != cfg.n_bs:
        errors["energy.harvest_high"] = f"needs {cfg.n_bs} values"
    if cfg.rate_mode not in ("poisson", "uniform_rate"):
        errors["arrivals.rate_mode"] = "must be poisson or uniform_rate"
    if cfg.schedule not in STEP_SCHEDULES:
        errors["globe.schedule"] = "must be constant, diminishing or accelerated"
    if cfg.V < 0:
        errors["globe.V"] = "must be >= 0"
    if cfg.epsilon <= 0:
        errors["globe.epsilon"] = "must be > 0"
    if cfg.horizon < 1:
        errors["run.horizon"] = "must be >= 1"
    if cfg.initial_battery not in ("theta", "zero", "full"):
        try:
            float(cfg.initial_battery)
        except ValueError:
            errors["globe.initial_battery"] = "theta, zero, full or a number"
    if not errors:
        try:
            cfg.build()
        except BatteryBoundError:
            raise
        except (ConfigurationError, ValueError) as exc:
            errors["network"] = str(exc)
    if errors:
        raise ConfigError(errors)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError({"file": str(exc)}) from exc
    return parse_config(text, source=str(path))


def preset_path(name: str = "paper_vi") -> Path:
    return Path(str(resources.files("globe_mec") / "presets" / f"{name}.cfg"))


def load_preset(name: str = "paper_vi") -> ExperimentConfig:
    return load_config(preset_path(name))
