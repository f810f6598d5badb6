"""Level-N discretization of the Sierpinski gasket.

Sites are stored as integer lattice coordinates ``(i, j)`` in the basis
``e1 = (1, 0) / 2**N`` and ``e2 = (1/2, sqrt(3)/2) / 2**N``, so every site has an
exact representation and shared cell corners are deduplicated without any
floating point comparison.  In that basis the boundary triple is

    a_0 = (0, 2**N),  a_1 = (0, 0),  a_2 = (2**N, 0).

Site indices are ordered by the level at which a point first appears, then by
``(j, i)``; ``a_0, a_1, a_2`` are always indices 0, 1, 2.  With that ordering
the sites of ``V_M`` are exactly the first ``|V_M|`` indices of ``V_N`` for every
``M <= N``, which the calculus and PDE modules rely on.
"""

from __future__ import annotations

import functools
import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

MAX_LEVEL = 12
HEIGHT = math.sqrt(3.0) / 2.0

# corner offsets of the three similitudes, in (i, j) lattice units
_LETTER_OFFSET = {0: (0, 1), 1: (0, 0), 2: (1, 0)}


class GasketError(ValueError):
    """Bounds, domain or precondition violation on the gasket graph."""


def n_sites(level: int) -> int:
    return 3 * (3**level + 1) // 2


def n_edges(level: int) -> int:
    return 3 ** (level + 1)


def as_word(w: str | Sequence[int] | None) -> tuple[int, ...]:
    """Normalize a cell address given as ``"012"`` or ``(0, 1, 2)``."""
    if w is None:
        return ()
    letters = tuple(int(c) for c in w)
    if any(c not in (0, 1, 2) for c in letters):
        raise GasketError(f"word letters must be in {{0,1,2}}, got {w!r}")
    return letters


def word_index(w: Sequence[int]) -> int:
    """Position of ``w`` in the lexicographic enumeration of words of length |w|."""
    idx = 0
    for c in w:
        idx = 3 * idx + c
    return idx


def index_word(idx: int, length: int) -> tuple[int, ...]:
    letters = []
    for _ in range(length):
        idx, c = divmod(idx, 3)
        letters.append(c)
    return tuple(reversed(letters))


def words(length: int) -> list[tuple[int, ...]]:
    return [index_word(k, length) for k in range(3**length)]


@dataclass(frozen=True)
class Point:
    """Exact site position: ``x = x_num / denom``, ``y = y_num * sqrt(3)/2 / denom``."""

    x_num: int
    y_num: int
    denom: int

    @property
    def x(self) -> Fraction:
        return Fraction(self.x_num, self.denom)

    @property
    def y_over_height(self) -> Fraction:
        return Fraction(self.y_num, self.denom)

    def to_float(self) -> tuple[float, float]:
        return self.x_num / self.denom, self.y_num * HEIGHT / self.denom


@dataclass(frozen=True, eq=False)
class GasketGraph:
    level: int
    ij: np.ndarray  # (n, 2) int64 lattice coordinates
    first_level: np.ndarray  # (n,) level at which each site first appears
    nbrs: np.ndarray  # (n, 4) neighbour indices, -1 padded
    degree: np.ndarray
    edges: np.ndarray  # (|E|, 2), u < v
    site_edges: np.ndarray  # (n, 4) incident edge ids, -1 padded
    adjacency: sp.csr_matrix = field(repr=False)

    @property
    def n_sites(self) -> int:
        return self.ij.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def boundary(self) -> tuple[int, int, int]:
        return (0, 1, 2)

    @property
    def interior(self) -> np.ndarray:
        return np.arange(3, self.n_sites)

    @property
    def xy(self) -> np.ndarray:
        """Float coordinates, for plotting and smooth test functions only."""
        scale = 2.0**self.level
        i = self.ij[:, 0].astype(float)
        j = self.ij[:, 1].astype(float)
        return np.column_stack([(i + 0.5 * j) / scale, j * HEIGHT / scale])

    def neighbors(self, x: int) -> np.ndarray:
        return self.nbrs[x, : self.degree[x]]

    def sub_level_count(self, M: int) -> int:
        """Number of sites of V_M; they are the first indices of this graph."""
        if not 0 <= M <= self.level:
            raise GasketError(f"level {M} outside 0..{self.level}")
        return n_sites(M)


@functools.lru_cache(maxsize=None)
def build(level: int) -> GasketGraph:
    """Construct G_N = (V_N, E_N); cached, the result is treated as immutable."""
    if not isinstance(level, (int, np.integer)) or not 0 <= level <= MAX_LEVEL:
        raise GasketError(f"level must be an integer in 0..{MAX_LEVEL}, got {level!r}")
    level = int(level)
    n_cells = 3**level
    off = np.zeros((n_cells, 2), dtype=np.int64)
    idx = np.arange(n_cells)
    for k in range(level):
        digit = (idx // 3 ** (level - 1 - k)) % 3
        step = 2 ** (level - 1 - k)
        off[:, 1] += np.where(digit == 0, step, 0)
        off[:, 0] += np.where(digit == 2, step, 0)
    # corners of every N-cell, ordered as images of (a_0, a_1, a_2)
    corners = np.stack([off + np.array(_LETTER_OFFSET[c]) for c in (0, 1, 2)], axis=1)
    side = 2**level + 1
    keys = corners[..., 0] * side + corners[..., 1]
    uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
    inverse = inverse.reshape(n_cells, 3)
    ij_u = np.column_stack([uniq // side, uniq % side])

    first = np.full(len(uniq), level, dtype=np.int64)
    for m in range(level - 1, -1, -1):
        step = 2 ** (level - m)
        on = (ij_u[:, 0] % step == 0) & (ij_u[:, 1] % step == 0)
        first[on] = m

    big = 2**level
    rank = np.empty(len(uniq), dtype=np.int64)
    base = [(0, big), (0, 0), (big, 0)]
    order_key = np.lexsort((ij_u[:, 0], ij_u[:, 1], first))
    corner_ids = [int(np.flatnonzero((ij_u[:, 0] == a) & (ij_u[:, 1] == b))[0]) for a, b in base]
    rest = [k for k in order_key if k not in set(corner_ids)]
    order = corner_ids + rest
    rank[np.array(order)] = np.arange(len(uniq))

    tri = rank[inverse]
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]])
    e.sort(axis=1)
    e = e[np.lexsort((e[:, 1], e[:, 0]))]

    n = len(uniq)
    ij = ij_u[np.array(order)]
    nbrs = -np.ones((n, 4), dtype=np.int64)
    site_edges = -np.ones((n, 4), dtype=np.int64)
    degree = np.zeros(n, dtype=np.int64)
    for eid, (u, v) in enumerate(e):
        nbrs[u, degree[u]] = v
        site_edges[u, degree[u]] = eid
        degree[u] += 1
        nbrs[v, degree[v]] = u
        site_edges[v, degree[v]] = eid
        degree[v] += 1
    data = np.ones(2 * len(e))
    adj = sp.csr_matrix(
        (data, (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(n, n),
    )
    g = GasketGraph(
        level=level,
        ij=ij,
        first_level=first[np.array(order)],
        nbrs=nbrs,
        degree=degree,
        edges=e,
        site_edges=site_edges,
        adjacency=adj,
    )
    for arr in (g.ij, g.first_level, g.nbrs, g.degree, g.edges, g.site_edges):
        arr.setflags(write=False)
    return g


def coordinates(g: GasketGraph, x: int) -> Point:
    """Exact position of site ``x`` as a dyadic pair over ``2**(N+1)``."""
    i, j = (int(v) for v in g.ij[x])
    return Point(x_num=2 * i + j, y_num=2 * j, denom=2 ** (g.level + 1))


def cell_offset(g: GasketGraph, w: Sequence[int]) -> tuple[int, int]:
    oi = oj = 0
    for k, c in enumerate(w, start=1):
        step = 2 ** (g.level - k)
        di, dj = _LETTER_OFFSET[c]
        oi += di * step
        oj += dj * step
    return oi, oj


def in_cell_mask(g: GasketGraph, w: str | Sequence[int]) -> np.ndarray:
    """Boolean mask of V_N ∩ K_w (cell corners included)."""
    w = as_word(w)
    if len(w) > g.level:
        raise GasketError(f"word of length {len(w)} exceeds level {g.level}")
    oi, oj = cell_offset(g, w)
    s = 2 ** (g.level - len(w))
    ri = g.ij[:, 0] - oi
    rj = g.ij[:, 1] - oj
    return (ri >= 0) & (rj >= 0) & (ri + rj <= s)


def cell_sites(g: GasketGraph, w: str | Sequence[int]) -> np.ndarray:
    """V_N^w = V_N ∩ K_w minus the cell's three corners."""
    w = as_word(w)
    mask = in_cell_mask(g, w) & (g.first_level > len(w))
    return np.flatnonzero(mask)


def cell_of_sites(g: GasketGraph, M: int) -> np.ndarray:
    """Index of the M-cell whose interior holds each site; -1 for sites of V_M."""
    if not 0 <= M <= g.level:
        raise GasketError(f"cell level {M} outside 0..{g.level}")
    ri = g.ij[:, 0].copy()
    rj = g.ij[:, 1].copy()
    idx = np.zeros(g.n_sites, dtype=np.int64)
    s = 2**g.level
    for _ in range(M):
        h = s // 2
        top = rj >= h
        right = ~top & (ri >= h)
        child = np.where(top, 0, np.where(right, 2, 1))
        rj = np.where(top, rj - h, rj)
        ri = np.where(right, ri - h, ri)
        idx = 3 * idx + child
        s = h
    idx[g.first_level <= M] = -1
    return idx


def graph_distance(g: GasketGraph, x: int, y: int) -> int:
    return int(bfs_distances(g, [x], stop_at=y)[y])


def bfs_distances(
    g: GasketGraph, sources: Iterable[int], max_depth: int | None = None, stop_at: int | None = None
) -> np.ndarray:
    """Multi-source BFS; unreached sites get -1."""
    dist = -np.ones(g.n_sites, dtype=np.int64)
    queue: deque[int] = deque()
    for s in sources:
        dist[s] = 0
        queue.append(int(s))
    nbrs, deg = g.nbrs, g.degree
    while queue:
        u = queue.popleft()
        if u == stop_at:
            break
        du = dist[u]
        if max_depth is not None and du >= max_depth:
            continue
        for k in range(deg[u]):
            v = nbrs[u, k]
            if dist[v] < 0:
                dist[v] = du + 1
                queue.append(int(v))
    return dist


def ball(g: GasketGraph, x: int, radius: int) -> np.ndarray:
    dist = bfs_distances(g, [x], max_depth=radius)
    return np.flatnonzero((dist >= 0) & (dist <= radius))


def neighborhood(g: GasketGraph, x: int, L0: int) -> np.ndarray:
    """Λ_x = {y : L(x, y) <= L0} for an interior site x."""
    if x in g.boundary:
        raise GasketError("neighbourhoods are only defined for interior sites")
    if L0 < 0:
        raise GasketError("L0 must be nonnegative")
    return ball(g, x, L0)


# ---------------------------------------------------------------- shapes


def _rotate(p: tuple[int, int]) -> tuple[int, int]:
    # 120 degrees counter-clockwise in the (e1, e2) lattice basis
    i, j = p
    return (-i - j, i)


def _plane_key(p: tuple[int, int]) -> tuple[int, int]:
    # lexicographic by (x, y) in the plane, exact
    i, j = p
    return (2 * i + j, j)


def canonical_order(points: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    pts = set(points)
    pts.discard((0, 0))
    return [(0, 0)] + sorted(pts, key=_plane_key)


@dataclass(frozen=True)
class Shape:
    """Rescaled neighbourhood 2^N(Λ_x - x), origin first, then lexicographic.

    A shape is its point set together with each point's graph distance from
    the origin.  The bare point set is ambiguous once L0 >= 2: the same lattice
    points occur with different wirings around a hole of side 2.
    """

    points: tuple[tuple[int, int], ...]
    dist: tuple[int, ...]

    @classmethod
    def from_points(cls, labelled: dict[tuple[int, int], int]) -> "Shape":
        ordered = canonical_order(labelled)
        return cls(tuple(ordered), tuple(labelled[p] for p in ordered))

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def origin_nbrs(self) -> tuple[int, ...]:
        """Positions of the origin's graph neighbours."""
        return tuple(k for k, d in enumerate(self.dist) if d == 1)

    @property
    def key(self) -> str:
        """Stable hash, used to key user-supplied rate tables."""
        text = ";".join(f"{i},{j}:{d}" for (i, j), d in zip(self.points, self.dist))
        return hashlib.sha1(text.encode()).hexdigest()[:12]

    def rotated(self, k: int = 1) -> "Shape":
        lab = dict(zip(self.points, self.dist))
        for _ in range(k % 3):
            lab = {_rotate(p): d for p, d in lab.items()}
        return Shape.from_points(lab)

    def rotation_class(self) -> tuple["Shape", int]:
        """(representative, k) with ``representative.rotated(k) == self``."""
        reps = [self.rotated(-k % 3) for k in range(3)]
        best = min(range(3), key=lambda k: (reps[k].points, reps[k].dist))
        return reps[best], best

    def plane_points(self) -> np.ndarray:
        p = np.array(self.points, dtype=float)
        return np.column_stack([p[:, 0] + 0.5 * p[:, 1], p[:, 1] * HEIGHT])


def site_shape(g: GasketGraph, x: int, L0: int) -> tuple[Shape, np.ndarray]:
    """Shape of Λ_x and the sites of Λ_x listed in the shape's canonical order."""
    if x in g.boundary:
        raise GasketError("neighbourhoods are only defined for interior sites")
    d = bfs_distances(g, [x], max_depth=L0)
    sites = np.flatnonzero(d >= 0)
    x0, y0 = g.ij[x]
    rel = {(int(g.ij[y, 0] - x0), int(g.ij[y, 1] - y0)): int(y) for y in sites}
    shape = Shape.from_points({p: int(d[y]) for p, y in rel.items()})
    ordered_sites = np.array([rel[p] for p in shape.points], dtype=np.int64)
    return shape, ordered_sites


@dataclass(frozen=True)
class ShapeCatalog:
    L0: int
    level: int
    shapes: tuple[Shape, ...]
    counts: tuple[int, ...]
    ratios: tuple[Fraction, ...]
    exceptional: tuple[bool, ...]  # shape only seen at sites with L(x, V_0) <= L0 - 1

    def ratio_of(self, shape: Shape) -> Fraction:
        return self.ratios[self.shapes.index(shape)]

    @property
    def generic_shapes(self) -> tuple[Shape, ...]:
        return tuple(s for s, ex in zip(self.shapes, self.exceptional) if not ex)


def site_shapes(g: GasketGraph, L0: int) -> tuple[list[Shape], np.ndarray, list[np.ndarray]]:
    """Shape list, per-site shape index (-1 on V_0) and ordered Λ_x for every site."""
    shapes: list[Shape] = []
    index: dict[Shape, int] = {}
    shape_of = -np.ones(g.n_sites, dtype=np.int64)
    ordered: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * g.n_sites
    for x in range(3, g.n_sites):
        s, sites = site_shape(g, x, L0)
        k = index.get(s)
        if k is None:
            k = index[s] = len(shapes)
            shapes.append(s)
        shape_of[x] = k
        ordered[x] = sites
    return shapes, shape_of, ordered


@functools.lru_cache(maxsize=None)
def shape_catalog(g: GasketGraph, L0: int) -> ShapeCatalog:
    """Enumerate 2^N(Λ_x - x) over x in V_N^0 with exact frequencies."""
    if L0 < 1:
        raise GasketError("L0 must be at least 1")
    if g.level < L0 + 2:
        raise GasketError(f"level {g.level} too small for L0={L0}; need N >= L0 + 2")
    shapes, shape_of, _ = site_shapes(g, L0)
    interior = shape_of[3:]
    counts = np.bincount(interior, minlength=len(shapes))
    total = len(interior)
    dist_b = bfs_distances(g, g.boundary)
    generic = set(shape_of[x] for x in range(3, g.n_sites) if dist_b[x] >= L0)
    return ShapeCatalog(
        L0=L0,
        level=g.level,
        shapes=tuple(shapes),
        counts=tuple(int(c) for c in counts),
        ratios=tuple(Fraction(int(c), total) for c in counts),
        exceptional=tuple(k not in generic for k in range(len(shapes))),
    )


def dump(g: GasketGraph) -> tuple[str, str]:
    """Edge list ``u v`` per line and site table ``id x_num y_num denom``."""
    edge_text = "".join(f"{u} {v}\n" for u, v in g.edges)
    rows = []
    for x in range(g.n_sites):
        p = coordinates(g, x)
        rows.append(f"{x} {p.x_num} {p.y_num} {p.denom}\n")
    return edge_text, "".join(rows)
