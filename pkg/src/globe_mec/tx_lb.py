"""Per-user transmission routing.

For fixed perturbed battery levels the routing problem separates by user into
a one-constraint LP whose optimum sends all of a user's traffic to the BS with
the largest coefficient ``V*c_tx + b_tilde_j * p_ju``, or drops it when every
coefficient is negative.
"""

import numpy as np
from numba import njit


def route_traffic(mu, coeffs):
    """Split ``mu`` over candidate BSs given their routing coefficients.

    Ties go to the lowest index. Returns an array shaped like ``coeffs``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size == 0:
        raise ValueError("candidate set is empty")
    alpha = np.zeros_like(coeffs)
    j = int(np.argmax(coeffs))
    if coeffs[j] >= 0:
        alpha[j] = mu
    return alpha


def routing_coefficients(V, c_tx, b_tilde, tx_energy, candidates):
    """``(U, N)`` matrix of ``V*c_tx[u] + b_tilde[j]*p[j, u]``, ``-inf`` off-candidate."""
    coef = V * np.asarray(c_tx)[:, None] + np.asarray(b_tilde)[None, :] * np.asarray(tx_energy).T
    return np.where(candidates, coef, -np.inf)


@njit(cache=True)
def _route_all(V, c_tx, b_tilde, p, cand, mu, alpha):
    U, N = cand.shape
    for u in range(U):
        best = -np.inf
        jbest = -1
        for j in range(N):
            alpha[u, j] = 0.0
            if cand[u, j]:
                c = V * c_tx[u] + b_tilde[j] * p[j, u]
                if c > best:
                    best = c
                    jbest = j
        if jbest >= 0 and best >= 0.0:
            alpha[u, jbest] = mu[u]


def route_all(V, c_tx, b_tilde, tx_energy, candidates, mu):
    """Route every user's traffic; returns ``alpha`` of shape ``(U, N)``."""
    cand = np.ascontiguousarray(candidates, dtype=np.bool_)
    alpha = np.zeros(cand.shape)
    _route_all(float(V), np.ascontiguousarray(c_tx, dtype=np.float64),
               np.ascontiguousarray(b_tilde, dtype=np.float64),
               np.ascontiguousarray(tx_energy, dtype=np.float64), cand,
               np.ascontiguousarray(mu, dtype=np.float64), alpha)
    return alpha
