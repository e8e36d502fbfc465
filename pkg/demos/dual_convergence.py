"""How fast the distributed computation solver settles, cold and warm.

Each slot the base stations post prices for their CPU capacity, users answer
with a water-filled split of their tasks, and prices move with the excess
load. Starting from last slot's prices, shifted by each BS's own battery
change, needs far fewer rounds than starting from zero.

Run with ``python demos/dual_convergence.py [slots]``.
"""

import sys

import numpy as np

from globe_mec.harness import experiments as ex
from globe_mec.harness.config import load_preset

n = int(sys.argv[1]) if len(sys.argv) > 1 else 200

study = ex.convergence(load_preset(), n_slots=n, dump_slots=[0])
for tag, it in (("cold", study.iters_cold), ("warm", study.iters_warm)):
    print(f"{tag}: median {np.median(it):g} iterations, 95th pct {np.percentile(it, 95):g}, "
          f"max {it.max()}")
print(f"slots within 1e-6 x capacity (warm): {study.fraction_within(1e-6):.1%}")

# the primal objective of the user responses along the cold iterates of the
# first slot; it approaches the optimum from above while capacity is exceeded
hist, qp, _ = study.histories[(0, "cold")]
for k in np.unique(np.geomspace(1, len(qp), 8).astype(int)) - 1:
    print(f"  iter {k + 1:>5}: objective {qp[k]:.8g}, violation {hist[k, -1]:.3g}")
