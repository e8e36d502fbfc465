"""Seeded exogenous processes and trace record/replay.

Observations are generated in fixed-size blocks; block ``b`` draws from a
generator seeded with ``(seed, b)``, so any slot can be regenerated from the
seed and its index alone.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import NetworkConfig, SlotObservation

TRACE_SCHEMA = "globe-trace/1"


class TraceError(ValueError):
    pass


def tx_energy_per_unit(gain, tx_power, data_size, bandwidth, noise):
    """Energy to send one traffic unit over a channel with power gain ``gain``."""
    snr = np.asarray(gain) * tx_power / noise
    return tx_power * data_size / (bandwidth * np.log2(1.0 + snr))


@dataclass(frozen=True, eq=False)
class EnvConfig:
    """Stochastic processes driving the network.

    ``snr_median_db[i, u]`` is the median SNR of pair ``(i, u)``; entries for
    non-candidate pairs are ignored. Per-draw SNR values are clipped to
    ``[snr_floor_db, snr_ceil_db]``, which bounds the per-unit transmission
    energy from both sides.
    """

    tx_rate: np.ndarray
    comp_rate: np.ndarray
    snr_median_db: np.ndarray
    harvest_high: np.ndarray | None = None
    price_mean: float = 1.0
    rate_mode: str = "poisson"
    snr_floor_db: float = -3.0
    snr_ceil_db: float = 30.0
    shadowing_db: float = 0.0
    n_mc: int = 64
    seed: int = 0
    block_size: int = 1024

    def __post_init__(self):
        if self.rate_mode not in ("poisson", "uniform_rate"):
            raise ValueError(f"unknown rate_mode {self.rate_mode!r}")
        if self.snr_floor_db > self.snr_ceil_db:
            raise ValueError("snr_floor_db must not exceed snr_ceil_db")
        if self.n_mc < 1 or self.block_size < 1:
            raise ValueError("n_mc and block_size must be positive")
        if self.price_mean < 0:
            raise ValueError("price_mean must be non-negative")
        if np.any(np.asarray(self.tx_rate) < 0) or np.any(np.asarray(self.comp_rate) < 0):
            raise ValueError("arrival rates must be non-negative")

    def replace(self, **changes) -> "EnvConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ObservationBlock:
    """Consecutive observations stored as stacked arrays."""

    tx_demand: np.ndarray  # (T, U)
    comp_demand: np.ndarray  # (T, U)
    harvest: np.ndarray  # (T, N)
    price: np.ndarray  # (T,)
    tx_energy: np.ndarray  # (T, N, U)

    def __len__(self):
        return len(self.price)

    def slot(self, k: int) -> SlotObservation:
        return SlotObservation(
            tx_demand=self.tx_demand[k], comp_demand=self.comp_demand[k],
            harvest=self.harvest[k], price=float(self.price[k]),
            tx_energy=self.tx_energy[k])

    def __getitem__(self, sl: slice) -> "ObservationBlock":
        return ObservationBlock(self.tx_demand[sl], self.comp_demand[sl], self.harvest[sl],
                                self.price[sl], self.tx_energy[sl])

    @staticmethod
    def concat(blocks) -> "ObservationBlock":
        blocks = list(blocks)
        return ObservationBlock(*(np.concatenate([getattr(b, f) for b in blocks])
                                  for f in ("tx_demand", "comp_demand", "harvest",
                                            "price", "tx_energy")))


def _canon(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _canon(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return _canon(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [_canon(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (float, np.floating)):
        return repr(float(obj))
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


def config_digest(*objs) -> str:
    """Short stable hash of configuration objects."""
    blob = json.dumps([_canon(o) for o in objs], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Environment:
    """Generator of :class:`SlotObservation` for a network."""

    def __init__(self, network: NetworkConfig, config: EnvConfig):
        self.network = network
        self.config = config
        U, N = network.n_users, network.n_bs
        for name, arr in (("tx_rate", config.tx_rate), ("comp_rate", config.comp_rate)):
            if np.shape(arr) != (U,):
                raise ValueError(f"{name} must have one entry per user")
        if np.shape(config.snr_median_db) != (N, U):
            raise ValueError(f"snr_median_db must have shape {(N, U)}")
        high = config.harvest_high
        self._harvest_high = (np.full(N, network.harvest_cap) if high is None
                              else np.broadcast_to(np.asarray(high, float), (N,)).copy())
        if np.any(self._harvest_high > network.harvest_cap) or np.any(self._harvest_high < 0):
            raise ValueError("harvest_high must lie in [0, harvest_cap]")
        self._pairs = np.argwhere(network.candidates.T)  # (K, 2) rows of (i, u)
        i, u = self._pairs.T
        med = 10.0 ** (np.asarray(config.snr_median_db, float)[i, u] / 10.0)
        # exponential power gain with the requested median
        self._snr_mean = med / math.log(2.0)
        self._scale = network.tx_power[i] * network.data_size[u] / network.bandwidth
        self._snr_lo = 10.0 ** (config.snr_floor_db / 10.0)
        self._snr_hi = 10.0 ** (config.snr_ceil_db / 10.0)
        self._cache: tuple[int, ObservationBlock] | None = None
        self.digest = config_digest(network, config)

    @property
    def seed(self) -> int:
        return self.config.seed

    def p_bounds(self) -> tuple[float, float]:
        """Deterministic ``(p_min, p_max)`` over everything the generator can emit."""
        lo = self._scale / math.log2(1.0 + self._snr_hi)
        hi = self._scale / math.log2(1.0 + self._snr_lo)
        return float(lo.min()), float(hi.max())

    def _generate(self, b: int) -> ObservationBlock:
        cfg, net = self.config, self.network
        B, U, N = cfg.block_size, net.n_users, net.n_bs
        rng = np.random.default_rng([cfg.seed, b])
        if cfg.rate_mode == "poisson":
            mu_rate = np.broadcast_to(cfg.tx_rate, (B, U))
            lam_rate = np.broadcast_to(cfg.comp_rate, (B, U))
        else:
            mu_rate = rng.uniform(0.0, 2.0 * np.asarray(cfg.tx_rate), size=(B, U))
            lam_rate = rng.uniform(0.0, 2.0 * np.asarray(cfg.comp_rate), size=(B, U))
        mu = np.minimum(rng.poisson(mu_rate).astype(float), net.mu_max)
        lam = np.minimum(rng.poisson(lam_rate).astype(float), net.lambda_max)
        harvest = rng.uniform(0.0, 1.0, size=(B, N)) * self._harvest_high
        price = rng.uniform(0.0, 2.0 * cfg.price_mean, size=B)
        K = len(self._pairs)
        mean = np.broadcast_to(self._snr_mean, (B, K))
        if cfg.shadowing_db > 0:
            mean = mean * 10.0 ** (rng.normal(0.0, cfg.shadowing_db, size=(B, K)) / 10.0)
        snr = rng.standard_exponential(size=(B, K, cfg.n_mc)) * mean[..., None]
        np.clip(snr, self._snr_lo, self._snr_hi, out=snr)
        inv_rate = 1.0 / np.log2(1.0 + snr)
        p_pairs = self._scale * inv_rate.mean(axis=2)
        p = np.full((B, N, U), np.inf)
        p[:, self._pairs[:, 0], self._pairs[:, 1]] = p_pairs
        return ObservationBlock(mu, lam, harvest, price, p)

    def _block_at(self, b: int) -> ObservationBlock:
        if self._cache is None or self._cache[0] != b:
            self._cache = (b, self._generate(b))
        return self._cache[1]

    def observation(self, t: int) -> SlotObservation:
        if t < 0:
            raise IndexError("slot index must be non-negative")
        B = self.config.block_size
        return self._block_at(t // B).slot(t % B)

    def block(self, t0: int, T: int) -> ObservationBlock:
        """Observations for slots ``t0 .. t0+T-1``."""
        B = self.config.block_size
        parts = []
        t = t0
        while t < t0 + T:
            b, off = divmod(t, B)
            n = min(B - off, t0 + T - t)
            parts.append(self._block_at(b)[off:off + n])
            t += n
        return parts[0] if len(parts) == 1 else ObservationBlock.concat(parts)

    def __iter__(self):
        t = 0
        while True:
            yield self.observation(t)
            t += 1

    def record(self, T: int) -> "Trace":
        return Trace(self.block(0, T), seed=self.config.seed, digest=self.digest)


@dataclass(frozen=True, eq=False)
class Trace:
    """A recorded observation stream; replay never touches the generators."""

    data: ObservationBlock
    seed: int | None = None
    digest: str = ""

    def __len__(self):
        return len(self.data)

    def observation(self, t: int) -> SlotObservation:
        if not 0 <= t < len(self):
            raise TraceError(f"trace holds {len(self)} slots, slot {t} requested")
        return self.data.slot(t)

    def block(self, t0: int, T: int) -> ObservationBlock:
        if t0 < 0 or t0 + T > len(self):
            raise TraceError(f"trace holds {len(self)} slots, {t0 + T} requested")
        return self.data[t0:t0 + T]

    def __iter__(self):
        for t in range(len(self)):
            yield self.data.slot(t)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(path, trace: Trace):
    """Write ``trace`` as a versioned wide CSV.

    Line 1 is a metadata comment; line 2 the header
    ``t,price,mu_<u>...,lambda_<u>...,harvest_<i>...,p_<i>_<u>...``.
    ``p`` columns exist for every (BS, user) pair and may hold ``inf``.
    """
    d = trace.data
    T, U = d.tx_demand.shape
    N = d.harvest.shape[1]
    header = (["t", "price"] + [f"mu_{u}" for u in range(U)]
              + [f"lambda_{u}" for u in range(U)] + [f"harvest_{i}" for i in range(N)]
              + [f"p_{i}_{u}" for i in range(N) for u in range(U)])
    with open(path, "w", newline="") as fh:
        fh.write(f"#schema={TRACE_SCHEMA},n_bs={N},n_users={U},seed={trace.seed},"
                 f"digest={trace.digest}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(T):
            w.writerow([t, _fmt(d.price[t])] + [_fmt(x) for x in d.tx_demand[t]]
                       + [_fmt(x) for x in d.comp_demand[t]]
                       + [_fmt(x) for x in d.harvest[t]]
                       + [_fmt(x) for x in d.tx_energy[t].ravel()])


def read_trace(path) -> Trace:
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise TraceError(f"{path}: missing metadata line")
        meta = dict(kv.split("=", 1) for kv in first[1:].split(","))
        if meta.get("schema") != TRACE_SCHEMA:
            raise TraceError(f"{path}: schema {meta.get('schema')!r}, expected {TRACE_SCHEMA!r}")
        try:
            N, U = int(meta["n_bs"]), int(meta["n_users"])
        except (KeyError, ValueError) as exc:
            raise TraceError(f"{path}: bad metadata line") from exc
        reader = csv.reader(fh)
        header = next(reader, None)
        width = 2 + 2 * U + N + N * U
        if header is None or len(header) != width:
            raise TraceError(f"{path}: header does not match n_bs={N}, n_users={U}")
        rows = []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != width:
                raise TraceError(f"{path}:{lineno}: truncated row after slot {len(rows) - 1}")
            if int(row[0]) != len(rows):
                raise TraceError(f"{path}:{lineno}: slot index {row[0]} out of order")
            rows.append([float(x) for x in row[1:]])
    if not rows:
        raise TraceError(f"{path}: no slots")
    a = np.array(rows)
    price = a[:, 0]
    mu = a[:, 1:1 + U]
    lam = a[:, 1 + U:1 + 2 * U]
    harvest = a[:, 1 + 2 * U:1 + 2 * U + N]
    p = a[:, 1 + 2 * U + N:].reshape(len(a), N, U)
    seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
    return Trace(ObservationBlock(mu, lam, harvest, price, p), seed=seed,
                 digest=meta.get("digest", ""))
