import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sierpinski_gk import calculus as C
from sierpinski_gk import gasket as G


def smooth(g):
    x, y = g.xy[:, 0], g.xy[:, 1]
    return x**2 + np.sin(3 * y) + x * y


def test_extension_level_one():
    f = C.harmonic_extension([1.0, 0.0, 0.0], 1)
    g = G.build(1)
    assert np.allclose(f[:3], [1, 0, 0])
    # junctions next to the unit corner get 2/5, the opposite one 1/5
    for x in range(3, 6):
        want = 0.4 if 0 in g.neighbors(x) else 0.2
        assert f[x] == pytest.approx(want, abs=1e-14)
    assert sorted(np.round(f[3:], 14)) == [0.2, 0.4, 0.4]


def test_extension_by_linear_solve_oracle():
    # solve the 3x3 system at the junctions directly
    g = G.build(1)
    vals = np.array([0.3, -1.0, 2.0])
    A = np.zeros((3, 3))
    rhs = np.zeros(3)
    for k, x in enumerate(range(3, 6)):
        A[k, k] = 4
        for y in g.neighbors(x):
            if y < 3:
                rhs[k] += vals[y]
            else:
                A[k, y - 3] -= 1
    assert np.allclose(C.harmonic_extension(vals, 1)[3:], np.linalg.solve(A, rhs), atol=1e-14)


def test_extension_is_harmonic():
    f = C.harmonic_extension(np.random.default_rng(1).random(6), 5)
    # data sits on V_1; every finer site is harmonic
    assert np.max(np.abs(C.laplacian(G.build(5), f)[6:])) < 1e-8


@pytest.mark.parametrize("M", [0, 1, 2])
def test_energy_invariance(M):
    rng = np.random.default_rng(M)
    f = rng.random(G.n_sites(M))
    e0 = C.dirichlet_energy(G.build(M), f)
    for k in range(1, 5):
        ext = C.harmonic_extension(f, M + k)
        assert C.dirichlet_energy(G.build(M + k), ext) == pytest.approx(e0, abs=1e-10)


def test_energy_of_corner_indicator():
    for N in range(0, 5):
        f = C.harmonic_extension([1.0, 0.0, 0.0], N)
        assert C.dirichlet_energy(G.build(N), f) == pytest.approx(2.0, abs=1e-10)


def test_energy_monotone_for_smooth_function():
    e = [C.dirichlet_energy(G.build(N), smooth(G.build(N))) for N in range(0, 8)]
    assert all(b >= a - 1e-12 for a, b in zip(e, e[1:]))


def test_energy_monotone_under_restriction():
    # restricting any fine function can only lower the energy
    rng = np.random.default_rng(3)
    f = rng.random(G.n_sites(5))
    e = [C.dirichlet_energy(G.build(N), C.restrict(f, N)) for N in range(0, 6)]
    assert all(b >= a - 1e-12 for a, b in zip(e, e[1:]))


@pytest.mark.parametrize("N", [1, 2, 3, 4, 5, 6])
def test_green_identity(N):
    rng = np.random.default_rng(10 + N)
    g = G.build(N)
    f, h = rng.random(g.n_sites), rng.random(g.n_sites)
    interior, boundary = C.green_identity_terms(g, f, h)
    assert C.dirichlet_energy(g, f, h) == pytest.approx(interior + boundary, abs=1e-10)


def test_normal_derivative_of_corner_harmonic():
    f = C.harmonic_extension([1.0, 0.0, 0.0], 4)
    assert np.allclose(C.normal_derivatives(G.build(4), f), [2, -1, -1], atol=1e-9)


def test_polarization_symmetry():
    g = G.build(3)
    rng = np.random.default_rng(0)
    f, h = rng.random(g.n_sites), rng.random(g.n_sites)
    assert C.dirichlet_energy(g, f, h) == pytest.approx(C.dirichlet_energy(g, h, f))
    assert C.dirichlet_energy(g, f, f) == pytest.approx(C.dirichlet_energy(g, f))


def test_corner_resistance():
    assert C.effective_resistance(G.build(0), 0, 1) == pytest.approx(2 / 3, abs=1e-10)
    for N in range(0, 4):
        r0 = C.effective_resistance(G.build(N), 1, 2)
        r1 = C.effective_resistance(G.build(N + 1), 1, 2)
        assert r1 / r0 == pytest.approx(5 / 3, abs=1e-6)


def test_resistance_routes_agree():
    g = G.build(4)
    sites = C.interior_region(g, 2)
    z, zp = int(sites[0]), int(sites[-1])
    R = C.effective_resistance(g, z, zp, sites)
    Rm = C.resistance_matrix_pinv(g, sites)
    iz, izp = list(sites).index(z), list(sites).index(zp)
    assert Rm[iz, izp] == pytest.approx(R, rel=1e-9)
    assert C.variational_resistance(g, z, zp, sites) == pytest.approx(R, rel=1e-9)


def test_cg_path_matches_dense():
    g = G.build(6)  # above the dense limit
    assert g.n_sites > C.DENSE_LIMIT
    R = C.effective_resistance(g, 1, 2)
    assert R == pytest.approx((2 / 3) * (5 / 3) ** 6, rel=1e-9)


def test_resistance_errors():
    g = G.build(3)
    assert C.effective_resistance(g, 5, 5) == 0.0
    with pytest.raises(C.CalculusError):
        C.effective_resistance(g, 1, 2, sites=C.interior_region(g, 2))
    with pytest.raises(G.GasketError):
        C.interior_region(g, 1)


def test_harmonic_bump():
    f = C.harmonic_bump((0,), 2, 5)
    g = G.build(5)
    assert f.min() >= -1e-12 and f.max() <= 1 + 1e-12
    inside = G.in_cell_mask(g, (0,))
    assert np.allclose(f[inside & (g.first_level <= 3)], 1.0)


def test_bad_input_length():
    with pytest.raises(C.CalculusError):
        C.laplacian(G.build(2), np.zeros(5))
    with pytest.raises(C.CalculusError):
        C.harmonic_extension(np.zeros(7), 3)


@settings(max_examples=25, deadline=None)
@given(M=st.integers(0, 3), k=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_maximum_principle(M, k, seed):
    f = np.random.default_rng(seed).normal(size=G.n_sites(M))
    ext = C.harmonic_extension(f, M + k)
    assert ext.min() >= f.min() - 1e-12 and ext.max() <= f.max() + 1e-12
    assert np.array_equal(C.restrict(ext, M), f)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_resistance_is_a_metric(seed):
    g = G.build(3)
    rng = np.random.default_rng(seed)
    a, b, c = (int(v) for v in rng.choice(g.n_sites, 3, replace=False))
    Rab = C.effective_resistance(g, a, b)
    assert Rab == pytest.approx(C.effective_resistance(g, b, a))
    assert Rab <= C.effective_resistance(g, a, c) + C.effective_resistance(g, c, b) + 1e-12
