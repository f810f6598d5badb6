"""Discrete analysis on G_N: Laplacian, normal derivative, energy, harmonic
extension, harmonic bumps and effective resistance.

Site functions are plain float arrays of length ``|V_N|`` indexed like the
graph.  Since ``V_M`` is a prefix of ``V_N``, restricting a function from level
``N`` to level ``M`` is ``f[:n_sites(M)]``.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .gasket import GasketError, GasketGraph, as_word, build, in_cell_mask, n_sites

DENSE_LIMIT = 400
CG_RTOL = 1e-12


class CalculusError(ValueError):
    pass


def _check(g: GasketGraph, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (g.n_sites,):
        raise CalculusError(f"expected {g.n_sites} values, got shape {f.shape}")
    return f


def graph_laplacian(g: GasketGraph) -> sp.csr_matrix:
    """Combinatorial Laplacian D - A with unit conductances."""
    return (sp.diags(g.degree.astype(float)) - g.adjacency).tocsr()


def neighbor_sum(g: GasketGraph, f: np.ndarray) -> np.ndarray:
    return g.adjacency @ f


def laplacian(g: GasketGraph, f) -> np.ndarray:
    """Δ_N f(x) = 5^N Σ_{y~x} (f(y) - f(x)) on V_N^0; entries on V_0 are set to 0."""
    f = _check(g, f)
    out = 5.0**g.level * (neighbor_sum(g, f) - g.degree * f)
    out[:3] = 0.0
    return out


def normal_derivative(g: GasketGraph, f, a: int) -> float:
    if a not in (0, 1, 2):
        raise CalculusError(f"site {a} is not a boundary site")
    f = _check(g, f)
    nb = g.neighbors(a)
    return float((5.0 / 3.0) ** g.level * np.sum(f[a] - f[nb]))


def normal_derivatives(g: GasketGraph, f) -> np.ndarray:
    return np.array([normal_derivative(g, f, a) for a in (0, 1, 2)])


def _energy(g: GasketGraph, f: np.ndarray) -> float:
    # ordered pairs: every edge is visited from both ends, hence the 1/2
    d = f[g.edges[:, 0]] - f[g.edges[:, 1]]
    return float(0.5 * (5.0 / 3.0) ** g.level * 2.0 * np.dot(d, d))


def dirichlet_energy(g: GasketGraph, f, h=None) -> float:
    """ℰ_N(f), or the bilinear form ℰ_N(f, h) obtained by polarization."""
    f = _check(g, f)
    if h is None:
        return _energy(g, f)
    h = _check(g, h)
    return 0.25 * (_energy(g, f + h) - _energy(g, f - h))


def green_identity_terms(g: GasketGraph, f, h) -> tuple[float, float]:
    """Interior and boundary parts of the exact discrete Green identity.

    ``ℰ_N(f, h) = -3^{-N} Σ_{V_N^0} Δ_N f · h + Σ_{V_0} ∂_N^⊥ f · h``.
    The interior weight 3^{-N} equals (2/3)(3/2)|V_N|^{-1} up to a factor
    ``(3^N + 1)/3^N`` that tends to 1.
    """
    f = _check(g, f)
    h = _check(g, h)
    lap = laplacian(g, f)
    interior = -(3.0 ** -g.level) * float(np.dot(lap[3:], h[3:]))
    boundary = float(np.dot(normal_derivatives(g, f), h[:3]))
    return interior, boundary


# ------------------------------------------------------------ linear solves


def spd_solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Solve a symmetric positive definite sparse system.

    Dense Cholesky for small systems; Jacobi-preconditioned CG otherwise.
    """
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    if n <= DENSE_LIMIT:
        return scipy.linalg.solve(A.toarray(), b, assume_a="pos")
    dinv = 1.0 / A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda v: dinv * v)
    x, info = spla.cg(A, b, rtol=CG_RTOL, atol=0.0, M=M, maxiter=20 * n)
    if info != 0:
        raise CalculusError(f"conjugate gradient did not converge (info={info})")
    return x


def harmonic_fill(g: GasketGraph, fixed: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Function equal to ``values`` on ``fixed`` and graph-harmonic elsewhere."""
    fixed = np.asarray(fixed, dtype=np.int64)
    free_mask = np.ones(g.n_sites, dtype=bool)
    free_mask[fixed] = False
    free = np.flatnonzero(free_mask)
    L = graph_laplacian(g)
    out = np.zeros(g.n_sites)
    out[fixed] = values
    if free.size:
        A = L[free][:, free]
        b = -(L[free][:, fixed] @ np.asarray(values, dtype=float))
        out[free] = spd_solve(A.tocsr(), b)
    return out


def harmonic_extension(values, to_level: int) -> np.ndarray:
    """N-harmonic extension of data given on V_M (M inferred from the length)."""
    values = np.asarray(values, dtype=float)
    M = _level_of_length(values.size)
    if to_level < M:
        raise CalculusError(f"target level {to_level} below source level {M}")
    f = values
    for lev in range(M + 1, to_level + 1):
        g = build(lev)
        f = harmonic_fill(g, np.arange(n_sites(lev - 1)), f)
    return f


def _level_of_length(n: int) -> int:
    for M in range(0, 13):
        if n_sites(M) == n:
            return M
    raise CalculusError(f"{n} values do not match |V_M| for any level")


def restrict(f, level: int) -> np.ndarray:
    return np.asarray(f)[: n_sites(level)]


def harmonic_bump(w: str | Sequence[int], k: int, to_level: int | None = None) -> np.ndarray:
    """ι_w^k: indicator of V_{M+k} ∩ K_w, extended harmonically past level M+k."""
    w = as_word(w)
    if k < 1:
        raise CalculusError("k must be at least 1")
    base = len(w) + k
    g = build(base)
    f = in_cell_mask(g, w).astype(float)
    if to_level is None or to_level == base:
        return f
    return harmonic_extension(f, to_level)


def l1_distance(g: GasketGraph, f, h) -> float:
    """‖f - h‖ in L¹(m_N)."""
    return float(np.mean(np.abs(_check(g, f) - _check(g, h))))


# ---------------------------------------------------------- resistance


def interior_region(g: GasketGraph, depth: int) -> np.ndarray:
    """Sites of V_N ∩ K^I, where K^I removes the three corner cells of level ``depth``."""
    if not 2 <= depth <= g.level:
        # at depth 1 the corner cells cover all of K
        raise GasketError(f"depth {depth} outside 2..{g.level}")
    corner_cells = [(a,) * depth for a in (0, 1, 2)]
    inside_corner = np.zeros(g.n_sites, dtype=bool)
    for w in corner_cells:
        inside_corner |= in_cell_mask(g, w)
    keep = ~inside_corner
    # the corner cells' inner corners are shared with K^I
    for w in corner_cells:
        m = in_cell_mask(g, w)
        corners = np.flatnonzero(m & (g.first_level <= depth))
        keep[corners] = True
    for a in (0, 1, 2):
        keep[a] = False
    return np.flatnonzero(keep)


def effective_resistance(g: GasketGraph, z: int, zp: int, sites: Iterable[int] | None = None) -> float:
    """Unit-conductance effective resistance between z and z' on the induced subgraph."""
    if sites is None:
        sub = np.arange(g.n_sites)
    else:
        sub = np.unique(np.asarray(list(sites), dtype=np.int64))
    pos = {int(s): k for k, s in enumerate(sub)}
    if z not in pos or zp not in pos:
        raise CalculusError("endpoints must belong to the site set")
    if z == zp:
        return 0.0
    A = g.adjacency[sub][:, sub].tocsr()
    _, labels = connected_components(A, directed=False)
    iz, izp = pos[z], pos[zp]
    if labels[iz] != labels[izp]:
        raise CalculusError(f"sites {z} and {zp} are not connected in the induced graph")
    comp = np.flatnonzero(labels == labels[iz])
    A = A[comp][:, comp]
    L = (sp.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()
    cpos = {int(c): k for k, c in enumerate(comp)}
    iz, izp = cpos[iz], cpos[izp]
    keep = np.array([k for k in range(len(comp)) if k != izp])
    b = np.zeros(len(comp))
    b[iz] = 1.0
    v = spd_solve(L[keep][:, keep].tocsr(), b[keep])
    return float(v[np.searchsorted(keep, iz)])


def resistance_matrix_pinv(g: GasketGraph, sites: Sequence[int]) -> np.ndarray:
    """All-pairs effective resistance through the Laplacian pseudo-inverse (small graphs)."""
    sub = np.asarray(sites, dtype=np.int64)
    A = g.adjacency[sub][:, sub].toarray()
    L = np.diag(A.sum(axis=1)) - A
    P = np.linalg.pinv(L)
    d = np.diag(P)
    return d[:, None] + d[None, :] - 2 * P


def variational_resistance(g: GasketGraph, z: int, zp: int, sites: Sequence[int]) -> float:
    """sup of 2(h(z) - h(z'))² over the double-counted edge energy, attained at the potential."""
    sub = np.unique(np.asarray(sites, dtype=np.int64))
    R = effective_resistance(g, z, zp, sub)
    if R == 0.0:
        return 0.0
    # potential of unit current: harmonic off {z, z'}, value R at z, 0 at z'
    A = g.adjacency[sub][:, sub].tocsr()
    pos = {int(s): k for k, s in enumerate(sub)}
    Lg = (sp.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()
    fixed = np.array([pos[z], pos[zp]])
    free = np.setdiff1d(np.arange(len(sub)), fixed)
    h = np.zeros(len(sub))
    h[fixed] = [1.0, 0.0]
    if free.size:
        h[free] = spd_solve(Lg[free][:, free].tocsr(), -(Lg[free][:, fixed] @ h[fixed]))
    rows, cols = A.nonzero()
    denom = float(np.sum((h[rows] - h[cols]) ** 2))
    return 2.0 * (h[pos[z]] - h[pos[zp]]) ** 2 / denom
