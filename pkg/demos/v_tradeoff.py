"""Cost against battery size as the control weight V grows.

Larger V pushes the time-average cost down roughly as 1/V, while the battery
level the controller settles at, theta = V*c_max + E_max, grows linearly.
Every V value is run on the same seeds so the comparison is matched.

Run with ``python demos/v_tradeoff.py [T]``.
"""

import sys

import numpy as np

from globe_mec.harness import experiments as ex
from globe_mec.harness.config import load_preset

T = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
Vs = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0]

rows = ex.sweep(load_preset(), "V", Vs, replicates=3, T=T)
print(f"{'V':>6}{'mean cost':>12}{'+/-95%':>10}{'theta':>10}{'mean battery':>14}")
for r in rows:
    print(f"{r.axis_value:>6g}{r.mean_cost:>12.4g}{r.ci95:>10.2g}{r.theta:>10.1f}"
          f"{r.mean_battery:>14.1f}")

theta = np.array([r.theta for r in rows])
batt = np.array([r.mean_battery for r in rows])
slope, icpt = np.polyfit(theta, batt, 1)
print(f"mean battery ~ {slope:.3f} * theta + {icpt:.1f}")
