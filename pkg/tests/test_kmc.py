import numpy as np
import pytest

from sierpinski_gk import exact, harness, kmc
from sierpinski_gk import gasket as G
from sierpinski_gk.profiles import evaluate
from sierpinski_gk.rates import constant, dfl, ising


def params(**kw):
    base = dict(level=3, b=1.0, family=dfl(0.4), T=0.2, lam_plus=(0.8, 0.2, 0.5), lam_minus=(0.2, 0.8, 0.5), seed=5)
    base.update(kw)
    return kmc.SimParams(**base)


def test_reproducible_and_replica_seeding():
    p = params()
    a = kmc.run(p, replicas=3, sample_times=[0.1, 0.2], snapshots=True)
    b = kmc.run(p, replicas=3, sample_times=[0.1, 0.2], snapshots=True)
    assert np.array_equal(a.snapshots, b.snapshots)
    # replica 2 of the ensemble is the single run seeded base + 2
    c = kmc.run(params(seed=7), replicas=1, sample_times=[0.1, 0.2], snapshots=True)
    assert np.array_equal(a.snapshots[2], c.snapshots[0])


def test_parallel_matches_serial():
    p = params(level=2)
    ser = kmc.run(p, replicas=4, sample_times=[0.2], snapshots=True)
    par = kmc.run(p, replicas=4, sample_times=[0.2], snapshots=True, workers=2)
    assert np.array_equal(ser.snapshots, par.snapshots)
    assert np.array_equal(ser.counts, par.counts)


def test_closed_system_conserves_particles():
    p = params(level=4, glauber=False, reservoirs=False, T=0.5)
    obs = kmc.run(p, replicas=2, sample_times=np.linspace(0, 0.5, 6), snapshots=True, check_every=97)
    totals = obs.snapshots.sum(axis=2)
    assert np.all(totals == totals[:, :1])
    assert obs.counts[:, 0].sum() > 0 and obs.counts[:, 1:4].sum() == 0


def test_discordant_cache_self_check():
    obs = kmc.run(params(level=3, family=ising(0.7)), replicas=2, check_every=1)
    assert obs.events > 1000


def test_constant_rates_never_reject():
    obs = kmc.run(params(family=constant(1.0)), replicas=2)
    assert obs.counts[:, 2].sum() == 0
    assert obs.counts[:, 1].sum() > 0


def test_slow_boundary_rarely_flips():
    # boundary rate (5/b)^N: b = 5 makes it order one
    obs = kmc.run(params(b=5.0, T=0.1), replicas=20)
    assert obs.counts[:, 3].mean() < 2.0


def test_observables_match_snapshots():
    p = params()
    names, F = harness.default_tests(3)
    obs = kmc.run(p, replicas=2, sample_times=[0.05, 0.2], test_functions=F, snapshots=True)
    direct = np.einsum("rsx,fx->rsf", obs.snapshots.astype(float), F) / F.shape[1]
    assert np.allclose(direct, obs.observables)
    assert kmc.empirical(obs.snapshots[0, 0], F[1]) == pytest.approx(obs.observables[0, 0, 1])


def test_initial_state_is_used():
    g = G.build(2)
    init = np.zeros(g.n_sites, np.uint8)
    init[5] = 1
    obs = kmc.run(params(level=2), init_state=init, sample_times=[0.0], snapshots=True)
    assert np.array_equal(obs.snapshots[0, 0], init)


def test_stratified_sampler_marginals_and_count():
    g = G.build(4)
    p = params(level=4, T=1e-12)
    obs = kmc.run(p, replicas=400, sample_times=[0.0], snapshots=True, rho0="linear:0.1,0.9,0.5",
                  sampler="stratified")
    rho = evaluate("linear:0.1,0.9,0.5", g)
    counts = obs.snapshots[:, 0].sum(axis=1)
    assert np.all(np.abs(counts - rho.sum()) <= 1.0 + 1e-9)
    freq = obs.snapshots[:, 0].mean(axis=0)
    assert np.max(np.abs(freq - rho)) < 0.15


def test_martingale_mean_zero():
    p = params(level=3, family=dfl(0.3), T=0.3)
    F = harness.tent(3)
    obs = kmc.run(p, replicas=300, sample_times=[0.1, 0.3], martingale=kmc.MartingaleSpec(F, 0.5 * F))
    m = obs.martingale
    se = m.std(axis=0, ddof=1) / np.sqrt(m.shape[0])
    assert np.all(np.abs(m.mean(axis=0)) < 4 * se + 1e-12)


def test_block_integrals_match_static_oracle():
    # with a tiny horizon nothing happens, so the time averages are the initial values
    N, M = 4, 1
    fam = dfl(0.4)
    g = G.build(N)
    eta = (np.random.default_rng(2).random(g.n_sites) < 0.4).astype(np.uint8)
    obs = kmc.run(params(level=N, family=fam, T=1e-12), init_state=eta, blocks=kmc.BlockSpec([M, 2]))
    assert obs.events == 0
    want = harness.one_block_static(N, M, fam, eta)
    assert np.allclose(obs.one_block[0, 0, :3], want, atol=1e-9)
    means = [eta[G.cell_sites(g, w)].mean() for w in G.words(2)]
    pa = obs.two_block[0, 1]
    assert pa[0] == pytest.approx(abs(means[0] - means[1]), abs=1e-9)
    assert pa[2] == pytest.approx(abs(means[1] - means[2]), abs=1e-9)


def test_small_exactness():
    case = harness.exactness_cases()[1]
    res = harness.exactness(replicas=20000, seed=3, cases=[case])[0]
    assert res.tv < 0.03


def test_generator_rows_sum_to_zero():
    Q = exact.generator(params(level=1, family=ising(0.5)))
    assert Q.shape == (64, 64)
    assert np.allclose(Q.sum(axis=1), 0.0)
    law = exact.law_at(params(level=1), exact.product_law(np.full(6, 0.3)), 0.1)
    assert law.sum() == pytest.approx(1.0)


def test_parameter_validation():
    with pytest.raises(kmc.SimulationError):
        params(level=13)
    with pytest.raises(kmc.SimulationError):
        params(b=0.0)
    with pytest.raises(kmc.SimulationError):
        params(lam_plus=(0.0, 1.0, 1.0), lam_minus=(0.0, 1.0, 1.0))
    with pytest.raises(kmc.SimulationError):
        kmc.run(params(), sample_times=[0.5])
    with pytest.raises(kmc.SimulationError):
        kmc.run(params(), sampler="sobol")
    with pytest.raises(kmc.SimulationError):
        kmc.run(params(level=3), blocks=kmc.BlockSpec([3]))


def test_block_time_average_matches_riemann_sum():
    N, M, T = 3, 1, 0.02
    fam = dfl(0.4)
    times = (np.arange(800) + 0.5) * T / 800
    obs = kmc.run(params(level=N, family=fam, T=T), sample_times=times, snapshots=True, blocks=kmc.BlockSpec([M]))
    assert obs.events > 50
    riemann = np.mean([harness.one_block_static(N, M, fam, s) for s in obs.snapshots[0]], axis=0)
    assert np.allclose(obs.one_block[0, 0, :3], riemann, atol=0.003)
