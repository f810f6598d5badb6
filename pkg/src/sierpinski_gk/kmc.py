"""Exact continuous-time simulation of the sped-up process 5^N L_N.

Event classes (rates already include the 5^N speed-up):

* swap of a discordant edge, rate 5^N each;
* Glauber flip of an interior site x, rate c_x(η), realised by thinning a
  clock of rate ‖c‖∞ per site;
* reservoir flip at a corner a, rate (5/b)^N (λ₋(a) η(a) + λ₊(a)(1 - η(a))).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .calculus import laplacian, normal_derivatives
from .gasket import GasketGraph, as_word, bfs_distances, build, cell_of_sites, cell_sites, n_sites, word_index
from .profiles import evaluate
from .rates import RateFamily, family_arrays, reaction

MAX_SIM_LEVEL = 20
SAMPLERS = ("bernoulli", "stratified")


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimParams:
    level: int
    b: float
    family: RateFamily
    T: float
    lam_plus: tuple[float, float, float] = (1.0, 1.0, 1.0)
    lam_minus: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    glauber: bool = True
    reservoirs: bool = True

    def __post_init__(self):
        if not 0 <= self.level <= MAX_SIM_LEVEL:
            raise SimulationError(f"level {self.level} outside 0..{MAX_SIM_LEVEL}; rates would overflow")
        if self.level > 12:
            raise SimulationError("graphs above level 12 are not built")
        if not self.b > 0:
            raise SimulationError("b must be positive")
        if not self.T > 0:
            raise SimulationError("T must be positive")
        lp = _triple(self.lam_plus)
        lm = _triple(self.lam_minus)
        if min(lp + lm) <= 0:
            raise SimulationError("reservoir rates must be positive")
        object.__setattr__(self, "lam_plus", lp)
        object.__setattr__(self, "lam_minus", lm)

    @property
    def rho_B(self) -> tuple[float, float, float]:
        return tuple(p / (p + m) for p, m in zip(self.lam_plus, self.lam_minus))

    @property
    def boundary_rate(self) -> float:
        return (5.0 / self.b) ** self.level

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "b": self.b,
            "T": self.T,
            "lam_plus": list(self.lam_plus),
            "lam_minus": list(self.lam_minus),
            "seed": self.seed,
            "glauber": self.glauber,
            "reservoirs": self.reservoirs,
            **self.family.params,
        }


def _triple(v) -> tuple[float, float, float]:
    arr = np.broadcast_to(np.asarray(v, dtype=float), (3,))
    return tuple(float(a) for a in arr)


@dataclass
class MartingaleSpec:
    """Test function F_t = F0 + t F1 on V_N."""

    F0: np.ndarray
    F1: np.ndarray | None = None


@dataclass
class BlockSpec:
    """Cell levels whose 1-block and 2-block time integrals are tracked."""

    levels: Sequence[int]


@dataclass
class Observation:
    params: SimParams
    sample_times: np.ndarray
    observables: np.ndarray  # (R, S, n_f) values of π_t(f)
    snapshots: np.ndarray | None  # (R, S, |V_N|) uint8
    martingale: np.ndarray | None  # (R, S)
    block_levels: tuple[int, ...] = ()
    one_block: np.ndarray | None = None  # (R, K, C) time-averaged W_w
    two_block: np.ndarray | None = None  # (R, K, P) time-averaged sibling gaps
    block_valid: np.ndarray | None = None  # (K, C) bool, cells with sites
    pair_valid: np.ndarray | None = None
    counts: np.ndarray = field(default_factory=lambda: np.zeros((0, 5), np.int64))
    wall_time: float = 0.0

    @property
    def replicas(self) -> int:
        return self.observables.shape[0]

    @property
    def events(self) -> int:
        return int(self.counts[:, 4].sum())


def init_config(g: GasketGraph, rho0, seed: int) -> np.ndarray:
    """Independent Bernoulli(ρ∘(x)) occupancies."""
    p = evaluate(rho0, g)
    if p.min() < 0 or p.max() > 1:
        raise SimulationError("initial profile must take values in [0, 1]")
    rng = np.random.default_rng(seed)
    return (rng.random(g.n_sites) < p).astype(np.uint8)


def empirical(eta: np.ndarray, f) -> float:
    """π(f) = |V_N|^{-1} Σ η(x) f(x)."""
    eta = np.asarray(eta, dtype=float)
    return float(np.dot(eta, np.broadcast_to(np.asarray(f, dtype=float), eta.shape)) / eta.size)


def block_average(g: GasketGraph, eta: np.ndarray, w) -> float:
    sites = cell_sites(g, as_word(w))
    if sites.size == 0:
        raise SimulationError(f"cell {w!r} has no interior sites at level {g.level}")
    return float(np.mean(np.asarray(eta)[sites]))


def discordant_edges(g: GasketGraph, eta: np.ndarray) -> np.ndarray:
    e = g.edges
    return np.flatnonzero(eta[e[:, 0]] != eta[e[:, 1]])


def _reverse_balls(ball: np.ndarray, ball_len: np.ndarray, n: int):
    members: list[list[int]] = [[] for _ in range(n)]
    for x in range(3, n):
        for k in range(ball_len[x]):
            members[ball[x, k]].append(x)
    ptr = np.zeros(n + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(m) for m in members])
    idx = np.array([y for m in members for y in m], dtype=np.int64)
    return ptr, idx


def one_block_mask(g: GasketGraph, M: int, L0: int) -> np.ndarray:
    """Sites at graph distance >= L0 + 1 from V_M (membership in some V_N^{L0,w})."""
    d = bfs_distances(g, range(n_sites(M)))
    return d >= L0 + 1


def _block_setup(g: GasketGraph, levels: Sequence[int], L0: int):
    K = len(levels)
    C = max(3**m for m in levels)
    cell_of = -np.ones((K, g.n_sites), dtype=np.int64)
    one = np.zeros((K, g.n_sites), dtype=np.bool_)
    cnt = np.zeros((K, C))
    pa = -np.ones((K, C), dtype=np.int64)
    pb = -np.ones((K, C), dtype=np.int64)
    cell_pairs = -np.ones((K, C, 2), dtype=np.int64)
    for k, m in enumerate(levels):
        if not 0 <= m < g.level:
            raise SimulationError(f"block level {m} must be below the simulation level {g.level}")
        cell_of[k] = cell_of_sites(g, m)
        one[k] = one_block_mask(g, m, L0)
        cnt[k, : 3**m] = np.bincount(cell_of[k][cell_of[k] >= 0], minlength=3**m)
        # sibling pairs share a parent: cells 3p+i, 3p+j
        p = 0
        if m >= 1:
            for parent in range(3 ** (m - 1)):
                for i, j in ((0, 1), (0, 2), (1, 2)):
                    a, b = 3 * parent + i, 3 * parent + j
                    pa[k, p], pb[k, p] = a, b
                    for c in (a, b):
                        slot = 0 if cell_pairs[k, c, 0] < 0 else 1
                        cell_pairs[k, c, slot] = p
                    p += 1
    return cell_of, one, cnt, pa, pb, cell_pairs


_SETUP_CACHE: dict = {}


def _family_arrays_cached(family: RateFamily, g: GasketGraph):
    key = (family, g.level) if family.kind != "table" else None
    if key is not None and key in _SETUP_CACHE:
        return _SETUP_CACHE[key]
    out = family_arrays(family, g)
    ball, ball_len = out[0], out[1]
    rev = _reverse_balls(ball, ball_len, g.n_sites)
    res = (*out, *rev)
    if key is not None:
        _SETUP_CACHE[key] = res
    return res


def run(
    params: SimParams,
    replicas: int = 1,
    sample_times: Sequence[float] | None = None,
    rho0="const:0.5",
    init_state: np.ndarray | None = None,
    test_functions: np.ndarray | None = None,
    snapshots: bool = False,
    martingale: MartingaleSpec | None = None,
    blocks: BlockSpec | None = None,
    check_every: int = 0,
    workers: int = 1,
    sampler: str = "bernoulli",
) -> Observation:
    """Simulate ``replicas`` independent copies; replica r uses seed ``params.seed + r``.

    ``sampler`` picks the initial law when no ``init_state`` is given:
    ``"bernoulli"`` (independent sites) or ``"stratified"`` (systematic
    sampling over a random site order; same marginals, particle count fixed
    up to one).
    """
    import time

    if workers > 1 and replicas > 1:
        return _run_parallel(params, replicas, sample_times, rho0, init_state, test_functions,
                             snapshots, martingale, blocks, check_every, workers, sampler)
    t_start = time.perf_counter()
    g = build(params.level)
    n = g.n_sites
    ball, ball_len, rate_off, rates, cmax, rev_ptr, rev_idx = _family_arrays_cached(params.family, g)
    if sample_times is None:
        sample_times = [params.T]
    st = np.array(sorted(float(t) for t in sample_times))
    if st.size and (st[0] < 0 or st[-1] > params.T):
        raise SimulationError("sample times must lie in [0, T]")
    p0 = evaluate(rho0, g)
    if p0.min() < 0 or p0.max() > 1:
        raise SimulationError("initial profile must take values in [0, 1]")
    if sampler not in SAMPLERS:
        raise SimulationError(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")
    use_init = 1 if init_state is not None else SAMPLERS.index(sampler) * 2
    init = np.zeros(n, np.uint8) if init_state is None else np.asarray(init_state, dtype=np.uint8)
    if test_functions is None:
        test_functions = np.ones((1, n))
    obs_F = np.ascontiguousarray(np.atleast_2d(test_functions), dtype=float)
    R, S = int(replicas), st.size
    snap = np.zeros((R, S, n) if snapshots else (1, 1, 1), np.uint8)
    obs = np.zeros((R, S, obs_F.shape[0]))

    mart_on = martingale is not None
    if mart_on:
        F0 = np.asarray(martingale.F0, dtype=float)
        F1 = np.zeros(n) if martingale.F1 is None else np.asarray(martingale.F1, dtype=float)
        if np.any(F0[:3] != 0) or np.any(F1[:3] != 0):
            if params.b < 5.0 / 3.0:
                import warnings

                warnings.warn("martingale test function is nonzero on V_0 in the Dirichlet regime", stacklevel=2)
        LF0, LF1 = laplacian(g, F0), laplacian(g, F1)
        dF0, dF1 = normal_derivatives(g, F0), normal_derivatives(g, F1)
    else:
        F0 = F1 = LF0 = LF1 = np.zeros(n)
        dF0 = dF1 = np.zeros(3)
    mart = np.zeros((R, S) if mart_on else (1, 1))

    blocks_on = blocks is not None and len(blocks.levels) > 0
    if blocks_on:
        levels = tuple(int(m) for m in blocks.levels)
        cell_of, one, cnt, pa, pb, cell_pairs = _block_setup(g, levels, params.family.L0)
        coef = np.asarray(reaction(params.family).poly.coef, dtype=float)
        if not params.glauber:
            coef = np.zeros(1)
        wint = np.zeros((R,) + cnt.shape)
        pint = np.zeros((R,) + pa.shape)
        bmean = np.zeros((R,) + cnt.shape)
    else:
        levels = ()
        cell_of = -np.ones((1, n), np.int64)
        one = np.zeros((1, n), np.bool_)
        cnt = np.zeros((1, 1))
        pa = pb = -np.ones((1, 1), np.int64)
        cell_pairs = -np.ones((1, 1, 2), np.int64)
        coef = np.zeros(1)
        wint = np.zeros((1, 1, 1))
        pint = np.zeros((1, 1, 1))
        bmean = np.zeros((1, 1, 1))
    counts = np.zeros((R, 5), np.int64)

    _kernels.run_ensemble(
        R, int(params.seed),
        g.site_edges, g.edges, g.n_edges,
        ball, ball_len, rate_off, rates, float(cmax), bool(params.glauber), rev_ptr, rev_idx,
        5.0**params.level, params.boundary_rate, np.array(params.lam_plus), np.array(params.lam_minus),
        bool(params.reservoirs),
        p0, init, use_init,
        float(params.T), st,
        bool(snapshots), snap, obs_F, obs,
        mart_on, F0, F1, LF0, LF1, dF0, dF1, 3.0**params.level, mart,
        blocks_on, cell_of, one, cnt, coef, pa, pb, cell_pairs, wint, pint, bmean,
        int(check_every), counts,
    )
    out = Observation(
        params=params,
        sample_times=st,
        observables=obs,
        snapshots=snap if snapshots else None,
        martingale=mart if mart_on else None,
        counts=counts,
    )
    if blocks_on:
        out.block_levels = levels
        out.one_block = wint / params.T
        out.two_block = pint / params.T
        out.block_valid = cnt > 0
        out.pair_valid = pa >= 0
    out.wall_time = time.perf_counter() - t_start
    return out


def _run_chunk(args):
    params, reps, kw = args
    return run(params, replicas=reps, **kw)


def _run_parallel(params, replicas, sample_times, rho0, init_state, test_functions,
                  snapshots, martingale, blocks, check_every, workers, sampler):
    import time

    t0 = time.perf_counter()
    workers = min(workers, replicas, os.cpu_count() or 1)
    sizes = [replicas // workers + (1 if i < replicas % workers else 0) for i in range(workers)]
    seeds = np.concatenate([[0], np.cumsum(sizes)[:-1]]) + params.seed
    kw = dict(sample_times=sample_times, rho0=rho0, init_state=init_state, test_functions=test_functions,
              snapshots=snapshots, martingale=martingale, blocks=blocks, check_every=check_every,
              sampler=sampler)
    jobs = [(replace(params, seed=int(s)), k, kw) for s, k in zip(seeds, sizes) if k > 0]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_run_chunk, jobs))
    return merge(parts, params, time.perf_counter() - t0)


def merge(parts: Sequence[Observation], params: SimParams, wall_time: float = 0.0) -> Observation:
    """Concatenate replica blocks in seed order."""
    first = parts[0]
    cat = lambda name: None if getattr(first, name) is None else np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    out = Observation(
        params=params,
        sample_times=first.sample_times,
        observables=cat("observables"),
        snapshots=cat("snapshots"),
        martingale=cat("martingale"),
        counts=cat("counts"),
        wall_time=wall_time,
    )
    if first.one_block is not None:
        out.block_levels = first.block_levels
        out.one_block = cat("one_block")
        out.two_block = cat("two_block")
        out.block_valid = first.block_valid
        out.pair_valid = first.pair_valid
    return out


def cell_ids(words: Sequence) -> list[int]:
    return [word_index(as_word(w)) for w in words]
