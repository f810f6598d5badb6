from collections import deque
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sierpinski_gk import gasket as G


def bfs(adj, src):
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


@pytest.mark.parametrize("N", range(0, 9))
def test_counts(N):
    g = G.build(N)
    assert g.n_sites == 3 * (3**N + 1) // 2 == G.n_sites(N)
    assert g.n_edges == 3 ** (N + 1) == G.n_edges(N)


def test_level_one_geometry():
    g = G.build(1)
    pts = {G.coordinates(g, x).to_float() for x in range(6)}
    h = np.sqrt(3) / 2
    want = {(0.5, h), (0.0, 0.0), (1.0, 0.0), (0.5, 0.0), (0.25, h / 2), (0.75, h / 2)}
    assert {tuple(np.round(p, 12)) for p in pts} == {tuple(np.round(p, 12)) for p in want}
    assert list(g.degree) == [2, 2, 2, 4, 4, 4]


def test_coarse_levels_are_prefixes():
    big = G.build(6)
    for M in range(6):
        small = G.build(M)
        scale = 2 ** (6 - M)
        assert np.array_equal(big.ij[: small.n_sites], small.ij * scale)
        assert big.sub_level_count(M) == small.n_sites
        assert np.all(big.first_level[: small.n_sites] <= M)


def test_edges_join_points_at_lattice_distance_one():
    g = G.build(5)
    d = g.ij[g.edges[:, 0]] - g.ij[g.edges[:, 1]]
    unit = {(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)}
    assert all(tuple(v) in unit for v in d)
    assert len({tuple(e) for e in g.edges}) == g.n_edges


def test_adjacency_symmetric_and_degrees():
    g = G.build(4)
    A = g.adjacency.toarray()
    assert np.array_equal(A, A.T)
    assert np.array_equal(A.sum(axis=1), g.degree)
    assert set(g.degree[3:]) == {4}


def test_dump_format_exact():
    edges, sites = G.dump(G.build(1))
    assert edges.splitlines()[0] == "0 4"
    assert len(edges.splitlines()) == 9
    assert sites.splitlines()[:4] == ["0 2 4 4", "1 0 0 4", "2 4 0 4", "3 2 0 4"]


def test_words_roundtrip():
    for n in range(4):
        ws = G.words(n)
        assert len(ws) == 3**n
        for k, w in enumerate(ws):
            assert G.word_index(w) == k
            assert G.index_word(k, n) == w
    assert G.as_word("012") == (0, 1, 2)
    with pytest.raises(G.GasketError):
        G.as_word("013")


def test_cells_partition_interior():
    g = G.build(5)
    for M in range(0, 5):
        cells = G.cell_of_sites(g, M)
        assert np.all(cells[: G.n_sites(M)] == -1)
        assert np.all(cells[G.n_sites(M):] >= 0)
        for k, w in enumerate(G.words(M)):
            assert np.array_equal(np.flatnonzero(cells == k), G.cell_sites(g, w))


def test_cell_sites_count():
    # V_N^w has |V_{N-M}| - 3 sites
    g = G.build(4)
    for M in range(0, 4):
        for w in G.words(M):
            assert G.cell_sites(g, w).size == G.n_sites(4 - M) - 3
            assert G.in_cell_mask(g, w).sum() == G.n_sites(4 - M)


def test_graph_distance_matches_reference_bfs():
    g = G.build(4)
    adj = {x: list(g.neighbors(x)) for x in range(g.n_sites)}
    ref = bfs(adj, 7)
    d = G.bfs_distances(g, [7])
    assert all(d[y] == ref[y] for y in range(g.n_sites))
    assert G.graph_distance(g, 1, 2) == 2**4


@pytest.mark.parametrize("N", [3, 4, 5, 6])
def test_catalog_L0_1(N):
    cat = G.shape_catalog(G.build(N), 1)
    assert len(cat.shapes) == 3
    assert cat.ratios == (Fraction(1, 3),) * 3
    assert all(s.size == 5 for s in cat.shapes)
    assert not any(cat.exceptional)


@pytest.mark.parametrize("N", [4, 5, 6])
def test_catalog_L0_2(N):
    cat = G.shape_catalog(G.build(N), 2)
    assert sum(cat.ratios) == 1
    assert len(cat.shapes) == 21
    assert sum(cat.exceptional) == 6
    assert sum(cat.counts) == G.n_sites(N) - 3


def test_catalog_too_small():
    with pytest.raises(G.GasketError):
        G.shape_catalog(G.build(2), 1)


def test_shapes_closed_under_rotation():
    cat = G.shape_catalog(G.build(5), 2)
    generic = set(cat.generic_shapes)
    for s in generic:
        assert s.rotated(3) == s
        assert s.rotated(1) in generic
        rep, k = s.rotation_class()
        assert rep.rotated(k) == s


def test_shape_key_is_stable():
    cat = G.shape_catalog(G.build(4), 1)
    keys = sorted(s.key for s in cat.shapes)
    assert keys == sorted(["41fc69b9e6ab", "c145d126167a", "66d08c64845b"])


def test_neighborhood_rejects_boundary():
    g = G.build(3)
    with pytest.raises(G.GasketError):
        G.neighborhood(g, 0, 1)


@settings(max_examples=60, deadline=None)
@given(N=st.integers(2, 6), data=st.data())
def test_site_shape_points_are_translates(N, data):
    g = G.build(N)
    x = data.draw(st.integers(3, g.n_sites - 1))
    L0 = data.draw(st.integers(1, 2))
    shape, sites = G.site_shape(g, x, L0)
    assert sites[0] == x
    assert np.array_equal(g.ij[sites] - g.ij[x], np.array(shape.points))
    d = G.bfs_distances(g, [x])
    assert tuple(d[sites]) == shape.dist
    assert set(G.neighborhood(g, x, L0)) == set(sites)


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 7), data=st.data())
def test_cell_offset_contains_corners(N, data):
    g = G.build(N)
    M = data.draw(st.integers(0, N))
    w = tuple(data.draw(st.lists(st.integers(0, 2), min_size=M, max_size=M)))
    mask = G.in_cell_mask(g, w)
    assert mask[: 3].sum() == (3 if M == 0 else sum(all(c == a for c in w) for a in range(3)))
