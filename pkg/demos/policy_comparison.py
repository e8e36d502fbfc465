"""Four policies on one shared trace of the bundled five-BS network.

GLOBE balances load across neighbouring base stations and buys grid power
when it is cheap relative to its battery deficit. SO-NG keeps every user at
its home BS and never buys. MO-G and MO-NG serve greedily each slot, with and
without grid power, and get a battery fifty times larger than GLOBE needs.

Run with ``python demos/policy_comparison.py [T]``.
"""

import sys

from globe_mec.harness import experiments as ex
from globe_mec.harness.config import load_preset

T = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000

cfg = load_preset()
runs = ex.compare(cfg, seed=0, T=T, battery_factor={"mo_g": 50.0, "mo_ng": 50.0})
burn = ex.effective_burn_in(cfg.burn_in, T)
theta = runs["globe"].theta

print(f"{T} slots, theta = {theta:.1f} J, burn-in {burn}")
print(f"{'policy':<8}{'mean cost':>12}{'battery/theta':>16}")
for name, res in runs.items():
    print(f"{name:<8}{res.mean_cost(burn):>12.4g}{res.mean_battery(burn) / theta:>16.2f}")

# GLOBE parks its batteries near theta. The myopic policies drift up through
# their large batteries, so short runs flatter them until the stock runs out
ratio = runs["globe"].mean_cost(burn) / runs["so_ng"].mean_cost(burn)
print(f"GLOBE / SO-NG cost ratio: {ratio:.3f}")
