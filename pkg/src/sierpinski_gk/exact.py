"""Brute-force generator of the full chain on small graphs.

Only meant for V_1 (64 states) and similar: the state space is {0,1}^{V_N}
and the generator is assembled densely, one transition at a time, straight
from the event-class definitions.  It serves as the reference law for the
simulator.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .gasket import build, site_shape
from .rates import bits_to_code, rate_array


def state_code(eta) -> int:
    return sum(int(v) << x for x, v in enumerate(eta))


def generator(params) -> np.ndarray:
    g = build(params.level)
    n = g.n_sites
    if n > 12:
        raise ValueError("state space too large for a dense generator")
    shapes = {}
    for x in range(3, n):
        s, sites = site_shape(g, x, params.family.L0)
        shapes[x] = (rate_array(params.family, s), sites)
    Q = np.zeros((2**n, 2**n))
    kaw = 5.0**params.level
    bnd = (5.0 / params.b) ** params.level
    for s in range(2**n):
        eta = [(s >> x) & 1 for x in range(n)]
        for u, v in g.edges:
            if eta[u] != eta[v]:
                Q[s, s ^ (1 << u) ^ (1 << v)] += kaw
        if params.glauber:
            for x in range(3, n):
                table, sites = shapes[x]
                Q[s, s ^ (1 << x)] += table[bits_to_code([eta[y] for y in sites])]
        if params.reservoirs:
            for a in range(3):
                rate = params.lam_minus[a] if eta[a] else params.lam_plus[a]
                Q[s, s ^ (1 << a)] += bnd * rate
        Q[s, s] = -Q[s].sum()
    return Q


def law_at(params, p0: np.ndarray, t: float) -> np.ndarray:
    """Distribution at time t from initial distribution p0 over state codes."""
    Q = generator(params)
    return p0 @ scipy.linalg.expm(Q * t)


def product_law(rho: np.ndarray) -> np.ndarray:
    n = rho.size
    codes = np.arange(2**n)
    bits = (codes[:, None] >> np.arange(n)) & 1
    return np.prod(np.where(bits == 1, rho, 1 - rho), axis=1)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def empirical_law(snapshots: np.ndarray) -> np.ndarray:
    """Histogram of configurations (R, n) over state codes."""
    n = snapshots.shape[1]
    codes = snapshots.astype(np.int64) @ (1 << np.arange(n))
    return np.bincount(codes, minlength=2**n) / snapshots.shape[0]
