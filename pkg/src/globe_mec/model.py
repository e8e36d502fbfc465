"""Domain types, bound derivation and per-slot bookkeeping.

All quantities are per slot with a slot length of one second, so rates and
per-slot amounts are interchangeable. Energies are in joules, traffic in
units of ``data_size`` bits, computation in tasks.

Array conventions used throughout the package:

* per-BS arrays have shape ``(n_bs,)``
* per-user arrays have shape ``(n_users,)``
* routing decisions ``alpha``/``beta`` have shape ``(n_users, n_bs)``
* the transmission-energy matrix ``tx_energy`` has shape ``(n_bs, n_users)``
  and holds ``inf`` for pairs outside a user's candidate set
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# relative slack used when checking linear constraints on float decisions
FEAS_RTOL = 1e-9


class ConfigurationError(ValueError):
    """A configuration violates a structural precondition or the battery-bound condition."""


class BatteryBoundError(ConfigurationError):
    """``battery_cap`` leaves too little headroom above ``V*c_max + E_max``."""


class InfeasibleDecision(ValueError):
    """A slot decision violates one of the per-slot constraints."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        msg = f"infeasible decision: {constraint}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnstableQueue(ValueError):
    """Offered load reaches or exceeds the service rate of an M/M/1 queue."""


def _as_array(x, n, dtype=float):
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 0:
        arr = np.full(n, arr.item(), dtype=dtype)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkConfig:
    """Static topology and parameters of the base-station network.

    ``candidates[u, i]`` is True when BS ``i`` can serve user ``u``.
    """

    cpu_speed: np.ndarray
    tx_power: np.ndarray
    home_bs: np.ndarray
    candidates: np.ndarray
    c_tx: np.ndarray
    c_com: np.ndarray
    data_size: np.ndarray
    bandwidth: float
    noise: float
    cycles_per_task: float
    delay_bound: float
    kappa: float
    harvest_cap: float
    mu_max: float
    lambda_max: float
    grid_cap: float
    battery_cap: float

    def __post_init__(self):
        n_bs = len(np.atleast_1d(self.cpu_speed))
        home = np.asarray(self.home_bs, dtype=np.int64)
        n_users = len(home)
        object.__setattr__(self, "cpu_speed", _as_array(self.cpu_speed, n_bs))
        object.__setattr__(self, "tx_power", _as_array(self.tx_power, n_bs))
        object.__setattr__(self, "home_bs", home)
        object.__setattr__(self, "candidates", np.asarray(self.candidates, dtype=bool))
        for name in ("c_tx", "c_com", "data_size"):
            object.__setattr__(self, name, _as_array(getattr(self, name), n_users))
        for arr in (self.cpu_speed, self.tx_power, self.home_bs, self.candidates,
                    self.c_tx, self.c_com, self.data_size):
            arr.setflags(write=False)
        self.validate()

    @property
    def n_bs(self) -> int:
        return len(self.cpu_speed)

    @property
    def n_users(self) -> int:
        return len(self.home_bs)

    @property
    def capacity(self) -> np.ndarray:
        """Admissible task rate per BS under the delay bound."""
        return self.cpu_speed / self.cycles_per_task - 1.0 / self.delay_bound

    @property
    def energy_per_task(self) -> np.ndarray:
        return self.kappa * self.cpu_speed**2

    def users_of(self, bs: int) -> np.ndarray:
        return np.flatnonzero(self.home_bs == bs)

    def validate(self):
        n_bs, n_users = self.n_bs, self.n_users
        if n_bs == 0 or n_users == 0:
            raise ConfigurationError("network needs at least one BS and one user")
        if self.tx_power.shape != (n_bs,):
            raise ConfigurationError("tx_power must have one entry per BS")
        if self.candidates.shape != (n_users, n_bs):
            raise ConfigurationError(
                f"candidates must have shape {(n_users, n_bs)}, got {self.candidates.shape}")
        if np.any((self.home_bs < 0) | (self.home_bs >= n_bs)):
            raise ConfigurationError("home_bs holds an invalid BS index")
        if not np.all(self.candidates.any(axis=1)):
            raise ConfigurationError("every user needs a non-empty candidate set")
        if not np.all(self.candidates[np.arange(n_users), self.home_bs]):
            raise ConfigurationError("home_bs must belong to the user's candidate set")
        if np.any(self.capacity <= 0):
            raise ConfigurationError(
                "cpu_speed/cycles_per_task - 1/delay_bound must be positive for every BS")
        nonneg = {
            "cpu_speed": self.cpu_speed, "tx_power": self.tx_power, "c_tx": self.c_tx,
            "c_com": self.c_com, "data_size": self.data_size,
            "harvest_cap": self.harvest_cap, "mu_max": self.mu_max,
            "lambda_max": self.lambda_max, "grid_cap": self.grid_cap,
            "battery_cap": self.battery_cap, "kappa": self.kappa,
        }
        for name, val in nonneg.items():
            if np.any(np.asarray(val) < 0):
                raise ConfigurationError(f"{name} must be non-negative")
        for name in ("bandwidth", "noise", "cycles_per_task", "delay_bound"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")

    def replace(self, **changes) -> "NetworkConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return NetworkConfig(**fields)

    def without_glb(self) -> "NetworkConfig":
        """Copy with every candidate set reduced to the home BS."""
        cand = np.zeros_like(self.candidates)
        cand[np.arange(self.n_users), self.home_bs] = True
        return self.replace(candidates=cand)


@dataclass(frozen=True, eq=False)
class SlotObservation:
    """Exogenous state of one slot."""

    tx_demand: np.ndarray
    comp_demand: np.ndarray
    harvest: np.ndarray
    price: float
    tx_energy: np.ndarray

    def check(self, config: NetworkConfig, rtol: float = FEAS_RTOL):
        """Raise ValueError if the observation breaks the caps in ``config``."""
        mu, lam = self.tx_demand, self.comp_demand
        if mu.shape != (config.n_users,) or lam.shape != (config.n_users,):
            raise ValueError("demand arrays must have one entry per user")
        if np.any(mu < 0) or np.any(mu > config.mu_max * (1 + rtol)):
            raise ValueError("tx_demand outside [0, mu_max]")
        if np.any(lam < 0) or np.any(lam > config.lambda_max * (1 + rtol)):
            raise ValueError("comp_demand outside [0, lambda_max]")
        if np.any(self.harvest < 0) or np.any(self.harvest > config.harvest_cap * (1 + rtol)):
            raise ValueError("harvest outside [0, harvest_cap]")
        if self.price < 0:
            raise ValueError("grid price must be non-negative")
        p_cand = self.tx_energy.T[config.candidates]
        if np.any(~(p_cand > 0)) or np.any(~np.isfinite(p_cand)):
            raise ValueError("tx_energy must be finite and positive on candidate pairs")


@dataclass(eq=False)
class BatteryState:
    """Battery levels plus the perturbation target ``theta``."""

    level: np.ndarray
    theta: float | np.ndarray

    @property
    def perturbed(self) -> np.ndarray:
        return self.level - self.theta


@dataclass(frozen=True, eq=False)
class SlotDecision:
    alpha: np.ndarray
    beta: np.ndarray
    harvest: np.ndarray
    purchase: np.ndarray


@dataclass(frozen=True, eq=False)
class SlotOutcome:
    tx_energy: np.ndarray
    comp_energy: np.ndarray
    cost_tx: np.ndarray
    cost_comp: np.ndarray
    cost_grid: np.ndarray
    dropped_tx: np.ndarray
    dropped_comp: np.ndarray
    battery_after: np.ndarray
    causality_violated: np.ndarray

    @property
    def energy(self) -> np.ndarray:
        return self.tx_energy + self.comp_energy

    @property
    def total_cost(self) -> float:
        return float(self.cost_tx.sum() + self.cost_comp.sum() + self.cost_grid.sum())


# constant: fixed safe step; diminishing: safe step / sqrt(k+1);
# accelerated: safe step with Nesterov momentum and gradient restart.
STEP_SCHEDULES = ("constant", "diminishing", "accelerated")


@dataclass(frozen=True)
class DualSettings:
    """Knobs of the distributed computation load balancer."""

    step_scale: float = 1.0
    schedule: str = "accelerated"
    tol_violation: float = 1e-6
    tol_slack: float = 1e-6
    max_iter: int = 5000
    warm_start: bool = True
    warm_shift: bool = True

    def __post_init__(self):
        if self.schedule not in STEP_SCHEDULES:
            raise ValueError(f"unknown step schedule {self.schedule!r}")
        if not self.step_scale > 0 or self.max_iter < 1:
            raise ValueError("step_scale must be positive and max_iter >= 1")

    @property
    def schedule_code(self) -> int:
        return STEP_SCHEDULES.index(self.schedule)


@dataclass(frozen=True)
class GlobeParams:
    V: float
    theta: float
    epsilon: float
    c_max: float
    E_max: float
    E_tx_max: float
    E_com_max: float
    V_max: float
    p_min: float
    dual: DualSettings = field(default_factory=DualSettings)

    def __post_init__(self):
        if self.V < 0:
            raise ConfigurationError("V must be non-negative")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")


def derive_bounds(config: NetworkConfig, p_min: float, p_max: float | None = None):
    """Return ``(c_max, E_max, E_tx_max, E_com_max)``.

    ``p_min`` and ``p_max`` bound the per-unit transmission energy over all
    candidate pairs and slots. Without ``p_max`` the transmission part of
    ``E_max`` is left at zero.
    """
    if config.n_bs == 0:
        raise ConfigurationError("empty network")
    if not p_min > 0:
        raise ConfigurationError("p_min must be positive")
    if p_max is not None and p_max < p_min:
        raise ConfigurationError("p_max must be >= p_min")
    f_min = config.cpu_speed.min()
    c_max = max(config.c_tx.max() / p_min,
                config.c_com.max() / (config.kappa * f_min**2))
    routable = config.candidates.sum(axis=0) * config.mu_max
    E_tx_max = float((p_max or 0.0) * routable.max())
    E_com_max = float(np.max(config.energy_per_task * config.capacity))
    return float(c_max), E_tx_max + E_com_max, E_tx_max, E_com_max


def derive_theta_and_vmax(config: NetworkConfig, c_max: float, E_max: float):
    """Largest admissible V and the map V -> theta.

    Returns ``(V_max, theta_of)`` where ``theta_of(V) = V * c_max + E_max``.
    """
    headroom = config.battery_cap - E_max - config.harvest_cap - config.grid_cap
    if headroom <= 0:
        raise BatteryBoundError(
            f"battery_cap={config.battery_cap:g} must exceed E_max + harvest_cap + grid_cap"
            f" = {E_max + config.harvest_cap + config.grid_cap:g}")
    V_max = np.inf if c_max == 0 else headroom / c_max

    def theta_of(V):
        return V * c_max + E_max

    return V_max, theta_of


def min_battery_cap(config: NetworkConfig, V: float, c_max: float, E_max: float) -> float:
    """Smallest battery capacity for which ``V > 0`` is admissible.

    At ``V = 0`` this equals ``E_max + harvest_cap + grid_cap``, which leaves
    no headroom and is rejected; any larger capacity works.
    """
    return V * c_max + E_max + config.harvest_cap + config.grid_cap


def make_params(config: NetworkConfig, V: float, p_min: float, p_max: float,
                epsilon: float = 1e7, dual: DualSettings | None = None,
                theta: float | None = None) -> GlobeParams:
    """Derive GLOBE parameters with the perturbation ``theta = V c_max + E_max``."""
    c_max, E_max, E_tx_max, E_com_max = derive_bounds(config, p_min, p_max)
    V_max, theta_of = derive_theta_and_vmax(config, c_max, E_max)
    if V > V_max * (1 + 1e-12):
        raise BatteryBoundError(
            f"V={V:g} exceeds V_max={V_max:g} for battery_cap={config.battery_cap:g}")
    return GlobeParams(
        V=float(V), theta=float(theta_of(V) if theta is None else theta),
        epsilon=float(epsilon), c_max=c_max, E_max=E_max, E_tx_max=E_tx_max,
        E_com_max=E_com_max, V_max=float(V_max), p_min=float(p_min),
        dual=dual or DualSettings())


def drift_constant(config: NetworkConfig, params: GlobeParams) -> float:
    """Constant ``D`` of the drift bound; reported only, never used in control."""
    return 0.5 * config.n_bs * ((params.E_tx_max + params.E_com_max) ** 2
                                + (config.harvest_cap + config.grid_cap) ** 2)


def mm1_delay(load, f, rho):
    """Mean sojourn time of an M/M/1 queue served at ``f/rho`` tasks per second."""
    service = np.asarray(f, dtype=float) / rho
    load = np.asarray(load, dtype=float)
    if np.any(load >= service):
        raise UnstableQueue("load must stay below the service rate f/rho")
    out = 1.0 / (service - load)
    return float(out) if out.ndim == 0 else out


def check_decision(config: NetworkConfig, obs: SlotObservation, dec: SlotDecision,
                   rtol: float = FEAS_RTOL):
    """Raise :class:`InfeasibleDecision` naming the first violated constraint."""
    U, N = config.n_users, config.n_bs
    for name, arr, shape in (("alpha", dec.alpha, (U, N)), ("beta", dec.beta, (U, N)),
                             ("harvest", dec.harvest, (N,)), ("purchase", dec.purchase, (N,))):
        if np.shape(arr) != shape:
            raise InfeasibleDecision("shape", f"{name} has shape {np.shape(arr)}, want {shape}")
        if not np.all(np.isfinite(arr)):
            raise InfeasibleDecision("finite", f"{name} holds non-finite values")
        if np.any(arr < 0):
            raise InfeasibleDecision("non-negativity", f"{name} has negative entries")
    off = ~config.candidates
    if np.any(dec.alpha[off] > 0) or np.any(dec.beta[off] > 0):
        raise InfeasibleDecision("candidate set", "load routed to a BS outside N_u")
    mu, lam = obs.tx_demand, obs.comp_demand
    if np.any(dec.alpha.sum(axis=1) > mu * (1 + rtol) + rtol):
        raise InfeasibleDecision("traffic demand", "sum_j alpha_uj > mu_u")
    if np.any(dec.beta.sum(axis=1) > lam * (1 + rtol) + rtol):
        raise InfeasibleDecision("task demand", "sum_j beta_uj > lambda_u")
    cap = config.capacity
    if np.any(dec.beta.sum(axis=0) > cap * (1 + rtol)):
        raise InfeasibleDecision("computation capacity", "received load exceeds f/rho - 1/d_max")
    if np.any(dec.harvest > obs.harvest * (1 + rtol) + rtol):
        raise InfeasibleDecision("harvest", "e_i exceeds the arrived energy")
    if np.any(dec.purchase > config.grid_cap * (1 + rtol) + rtol):
        raise InfeasibleDecision("grid cap", "g_i exceeds g_max")


def slot_energy(config: NetworkConfig, obs: SlotObservation, dec: SlotDecision):
    """Per-BS ``(E_tx, E_com)`` of a decision."""
    p = np.where(config.candidates.T, obs.tx_energy, 0.0)
    e_tx = np.einsum("iu,ui->i", p, dec.alpha)
    e_com = config.energy_per_task * dec.beta.sum(axis=0)
    return e_tx, e_com


def evaluate_slot(config: NetworkConfig, obs: SlotObservation, dec: SlotDecision,
                  battery: BatteryState | np.ndarray, check: bool = True) -> SlotOutcome:
    """Energy use, cost breakdown and next battery level of one slot.

    Causality violations (energy spent above the current level) are flagged in
    ``causality_violated``, never repaired.
    """
    if check:
        check_decision(config, obs, dec)
    level = battery.level if isinstance(battery, BatteryState) else np.asarray(battery, float)
    e_tx, e_com = slot_energy(config, obs, dec)
    dropped_tx = np.maximum(obs.tx_demand - dec.alpha.sum(axis=1), 0.0)
    dropped_comp = np.maximum(obs.comp_demand - dec.beta.sum(axis=1), 0.0)
    N = config.n_bs
    cost_tx = np.bincount(config.home_bs, weights=config.c_tx * dropped_tx, minlength=N)
    cost_comp = np.bincount(config.home_bs, weights=config.c_com * dropped_comp, minlength=N)
    cost_grid = obs.price * dec.purchase
    energy = e_tx + e_com
    after = np.minimum(level - energy + dec.harvest + dec.purchase, config.battery_cap)
    violated = energy > level + FEAS_RTOL * np.maximum(1.0, np.abs(level))
    return SlotOutcome(
        tx_energy=e_tx, comp_energy=e_com, cost_tx=cost_tx, cost_comp=cost_comp,
        cost_grid=cost_grid, dropped_tx=dropped_tx, dropped_comp=dropped_comp,
        battery_after=after, causality_violated=violated)


def p3_objective(config: NetworkConfig, obs: SlotObservation, dec: SlotDecision,
                 perturbed: np.ndarray, V: float) -> float:
    """Drift-plus-penalty objective minimised by GLOBE in one slot."""
    out = evaluate_slot(config, obs, dec, np.zeros(config.n_bs), check=False)
    cost = out.cost_tx + out.cost_comp + out.cost_grid
    net = out.energy - dec.harvest - dec.purchase
    return float(np.sum(V * cost - perturbed * net))
