"""Threshold rules for renewable harvesting and grid purchase."""

import numpy as np
from numba import njit


@njit(cache=True)
def _decide_energy(b_tilde, harvest, price, V, g_max, e_out, g_out):
    for i in range(b_tilde.shape[0]):
        e_out[i] = harvest[i] if b_tilde[i] <= 0.0 else 0.0
        g_out[i] = g_max if V * price + b_tilde[i] <= 0.0 else 0.0


def decide_energy(b_tilde, harvest_avail, price, V, g_max):
    """Harvest/purchase amounts minimising ``V*price*g + b_tilde*(g + e)``.

    Each BS harvests everything when its perturbed level is non-positive and
    buys ``g_max`` when ``V*price + b_tilde <= 0``; otherwise nothing.
    """
    b = np.ascontiguousarray(b_tilde, dtype=np.float64)
    h = np.ascontiguousarray(np.broadcast_to(harvest_avail, b.shape), dtype=np.float64)
    e = np.empty_like(b)
    g = np.empty_like(b)
    _decide_energy(b, h, float(price), float(V), float(g_max), e, g)
    return e, g
