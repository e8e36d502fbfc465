"""Online energy-aware load balancing for green mobile edge computing.

Each slot a drift-plus-penalty controller picks how much renewable energy to
harvest, how much grid energy to buy, where to send each user's traffic and
where to run its computation tasks. Batteries are kept near a target level so
the long-run cost approaches the offline optimum as ``V`` grows.
"""

from .model import (BatteryBoundError, BatteryState, ConfigurationError, DualSettings, GlobeParams,
                    InfeasibleDecision, NetworkConfig, SlotDecision, SlotObservation,
                    SlotOutcome, evaluate_slot, make_params)
from .env import EnvConfig, Environment, Trace, read_trace, write_trace
from .energy_policy import decide_energy
from .tx_lb import route_traffic
from .comp_lb import solve_centralized, solve_distributed
from .controller import GlobePolicy, HorizonResult, globe_step, run_horizon
from .baselines import MoGPolicy, MoNgPolicy, SoNgPolicy, make_policy

__version__ = "0.1.0"

__all__ = [
    "BatteryBoundError", "BatteryState", "ConfigurationError", "DualSettings", "EnvConfig", "Environment",
    "GlobeParams", "GlobePolicy", "HorizonResult", "InfeasibleDecision", "MoGPolicy",
    "MoNgPolicy", "NetworkConfig", "SlotDecision", "SlotObservation", "SlotOutcome",
    "SoNgPolicy", "Trace", "decide_energy", "evaluate_slot", "globe_step", "make_params",
    "make_policy", "read_trace", "route_traffic", "run_horizon", "solve_centralized",
    "solve_distributed", "write_trace",
]
