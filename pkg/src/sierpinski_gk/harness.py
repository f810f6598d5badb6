"""Experiments confronting the particle simulator with the PDE solver.

Every experiment takes an :class:`ExperimentConfig`, returns a plain report
dataclass and can persist CSV tables plus a JSON manifest.  Confidence
intervals are bootstrap half-widths (1.96 bootstrap standard errors) over
replicas.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import calculus, exact, kmc, pde
from .gasket import build, cell_sites, in_cell_mask, n_sites, words
from .rates import RateFamily, parse_family, reaction

KINDS = ("converge", "regime", "martingale", "replacement", "resistance", "exactness")
Z95 = 1.96


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config


@dataclass
class ExperimentConfig:
    kind: str
    levels: list[int] = field(default_factory=lambda: [4, 5, 6])
    replicas: int = 32
    b: list[float] = field(default_factory=lambda: [1.0])
    family: dict = field(default_factory=lambda: {"name": "dfl", "gamma": 0.4})
    lam_plus: list[float] = field(default_factory=lambda: [0.8, 0.2, 0.5])
    lam_minus: list[float] = field(default_factory=lambda: [0.2, 0.8, 0.5])
    rho0: str = "const:0.3"
    tests: str = "default"
    T: float = 0.5
    sample_times: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    seed: int = 1
    out_dir: str | None = None
    m_ref: int | None = None
    sampler: str = "bernoulli"
    glauber: bool = True
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if list(self.levels) != sorted(self.levels):
            raise ConfigError("levels must be sorted ascending")
        if self.replicas < 1:
            raise ConfigError("replicas must be at least 1")
        if any(t < 0 or t > self.T for t in self.sample_times):
            raise ConfigError("sample times must lie in [0, T]")
        self.rate_family()  # resolvable

    def rate_family(self) -> RateFamily:
        spec = dict(self.family)
        name = spec.pop("name")
        return parse_family(name, **spec)

    @property
    def rho_B(self) -> np.ndarray:
        lp, lm = np.array(self.lam_plus, float), np.array(self.lam_minus, float)
        return lp / (lp + lm)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "ExperimentConfig":
        """Load a config file, or the config embedded in a run manifest."""
        with open(path) as fh:
            doc = json.load(fh)
        if "report" in doc and isinstance(doc.get("config"), dict):
            doc = doc["config"]
        unknown = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------- statistics


def bootstrap(stat: Callable[[np.ndarray], float], data: np.ndarray, n_boot: int = 1000, seed: int = 0):
    """(estimate, 95% half-width) of ``stat`` resampling the leading axis."""
    est = float(stat(data))
    R = data.shape[0]
    if R < 2:
        return est, math.inf
    rng = np.random.default_rng(seed)
    reps = np.array([stat(data[rng.integers(0, R, R)]) for _ in range(n_boot)])
    return est, float(Z95 * reps.std(ddof=1))


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def package_version() -> str:
    from . import __version__

    return __version__


def write_manifest(out_dir: str | os.PathLike, payload: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"version": package_version(), "git": git_describe(), **payload}
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def write_csv(path: str | os.PathLike, header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ------------------------------------------------------------ test functions


def tent(level: int) -> np.ndarray:
    """1-harmonic function: 0 on V_0, 1 on the three level-1 junctions."""
    return calculus.harmonic_extension(np.array([0, 0, 0, 1, 1, 1], float), level)


def default_tests(level: int) -> tuple[list[str], np.ndarray]:
    """{1, x, y} plus harmonic bumps ι_w^2 for the three words of length 1.

    The bumps live on V_3 and beyond; below level 3 they are restricted to V_N,
    so every level sees the same functions on K.
    """
    g = build(level)
    names = ["one", "x", "y"]
    fs = [np.ones(g.n_sites), g.xy[:, 0], g.xy[:, 1]]
    for a in range(3):
        names.append(f"bump{a}")
        fs.append(calculus.restrict(calculus.harmonic_bump((a,), 2, max(level, 3)), level))
    return names, np.array(fs)


# ----------------------------------------------------------------- converge


@dataclass
class ConvergenceReport:
    levels: list[int]
    test_names: list[str]
    times: list[float]
    error: dict[int, float]  # max over f and t
    error_ci: dict[int, float]
    error_one: dict[int, float]  # f ≡ 1 only
    error_one_ci: dict[int, float]
    table: list[tuple]  # (N, f, t, sim mean, sim ci, pde)
    decreasing: bool
    separated: bool
    flagged: list[str]
    wall_time: float
    events: int

    def summary(self) -> str:
        lines = [f"N={N}: err={self.error[N]:.4f}±{self.error_ci[N]:.4f} "
                 f"(f=1: {self.error_one[N]:.4f}±{self.error_one_ci[N]:.4f})" for N in self.levels]
        lines.append(f"decreasing={self.decreasing} CI-separated={self.separated}")
        return "\n".join(lines)


def pde_reference(cfg: ExperimentConfig, bc: pde.BoundaryCondition, level: int) -> pde.Trajectory:
    phi = reaction(cfg.rate_family()) if cfg.glauber else reaction(None)
    return pde.solve(level, bc, phi, cfg.rho0, cfg.T, sample_times=cfg.sample_times)


def converge(cfg: ExperimentConfig) -> ConvergenceReport:
    t0 = time.perf_counter()
    fam = cfg.rate_family()
    m_ref = cfg.m_ref if cfg.m_ref is not None else max(cfg.levels)
    if m_ref < max(cfg.levels) - 1:
        raise ConfigError("reference level must be at least max(levels) - 1")
    b = cfg.b[0]
    bc = pde.BoundaryCondition.for_reservoirs(b, cfg.lam_plus, cfg.lam_minus)
    ref_traj = pde_reference(cfg, bc, m_ref)
    names, F_ref = default_tests(m_ref)
    times = list(cfg.sample_times)
    ref = np.array([[float(np.mean(F_ref[f] * ref_traj.at(t))) for f in range(len(names))] for t in times])

    error, error_ci, one, one_ci = {}, {}, {}, {}
    table = []
    flagged = []
    events = 0
    for k, N in enumerate(cfg.levels):
        _, F = default_tests(N)
        params = kmc.SimParams(level=N, b=b, family=fam, T=cfg.T, lam_plus=cfg.lam_plus,
                               lam_minus=cfg.lam_minus, seed=cfg.seed + 100_000 * k, glauber=cfg.glauber)
        obs = kmc.run(params, replicas=cfg.replicas, sample_times=times, rho0=cfg.rho0,
                      test_functions=F, workers=cfg.workers, sampler=cfg.sampler)
        events += obs.events
        data = obs.observables  # (R, S, f)
        error[N], error_ci[N] = bootstrap(lambda d: np.abs(d.mean(0) - ref).max(), data, seed=cfg.seed + N)
        one[N], one_ci[N] = bootstrap(lambda d: np.abs(d[:, :, 0].mean(0) - ref[:, 0]).max(), data,
                                      seed=cfg.seed + N + 1)
        if error_ci[N] > error[N]:
            flagged.append(f"N={N}: CI wider than the error estimate")
        mean = data.mean(0)
        se = data.std(0, ddof=1) / math.sqrt(data.shape[0]) if data.shape[0] > 1 else np.full(mean.shape, np.inf)
        for si, t in enumerate(times):
            for fi, name in enumerate(names):
                table.append((N, name, t, mean[si, fi], Z95 * se[si, fi], ref[si, fi]))
    lv = cfg.levels
    decreasing = all(error[a] > error[b_] for a, b_ in zip(lv, lv[1:]))
    separated = error[lv[0]] - error_ci[lv[0]] > error[lv[-1]] + error_ci[lv[-1]]
    return ConvergenceReport(lv, names, times, error, error_ci, one, one_ci, table,
                             decreasing, separated, flagged, time.perf_counter() - t0, events)


# ------------------------------------------------------------ regime sweep


@dataclass
class RegimeReport:
    level: int
    bs: list[float]
    cell_level: int
    # errors[b][regime] = (estimate, ci)
    errors: dict[float, dict[str, tuple[float, float]]]
    # margins[b][regime] = (mismatched - matched, ci of the difference)
    margins: dict[float, dict[str, tuple[float, float]]]
    passed: bool
    wall_time: float
    events: int

    def summary(self) -> str:
        lines = []
        for b in self.bs:
            e = self.errors[b]
            parts = ", ".join(f"{k}={v[0]:.4f}±{v[1]:.4f}" for k, v in e.items())
            lines.append(f"b={b:.4g} (matched {pde.regime_of(b)}): {parts}")
        lines.append(f"all matched regimes win by >= 2 CIs: {self.passed}")
        return "\n".join(lines)


def corner_cells(level: int) -> list[tuple[int, ...]]:
    return [(a,) * level for a in range(3)]


def regime_sweep(cfg: ExperimentConfig) -> RegimeReport:
    """Near-corner block averages against the PDE in each boundary regime."""
    t0 = time.perf_counter()
    N = cfg.levels[-1]
    m = int(cfg.extra.get("cell_level", 2))
    fam = cfg.rate_family()
    phi = reaction(fam) if cfg.glauber else reaction(None)
    g = build(N)
    cells = [cell_sites(g, w) for w in corner_cells(m)]
    times = list(cfg.sample_times)
    base = pde.BoundaryCondition.for_reservoirs(1.0, cfg.lam_plus, cfg.lam_minus, kind="robin")
    refs = {}
    for kind in pde.REGIMES:
        tr = pde.solve(N, base.with_kind(kind), phi, cfg.rho0, cfg.T, sample_times=times)
        refs[kind] = np.array([[tr.at(t)[c].mean() for c in cells] for t in times])
    errors, margins = {}, {}
    passed = True
    events = 0
    for k, b in enumerate(cfg.b):
        params = kmc.SimParams(level=N, b=b, family=fam, T=cfg.T, lam_plus=cfg.lam_plus,
                               lam_minus=cfg.lam_minus, seed=cfg.seed + 100_000 * k, glauber=cfg.glauber)
        obs = kmc.run(params, replicas=cfg.replicas, sample_times=times, rho0=cfg.rho0,
                      snapshots=True, workers=cfg.workers, sampler=cfg.sampler)
        events += obs.events
        blocks = np.stack([obs.snapshots[:, :, c].mean(axis=2) for c in cells], axis=2)  # (R, S, 3)
        err = {kind: bootstrap(lambda d, r=refs[kind]: np.abs(d.mean(0) - r).max(), blocks, seed=cfg.seed + k)
               for kind in pde.REGIMES}
        matched = pde.regime_of(b)
        marg = {}
        for kind in pde.REGIMES:
            if kind == matched:
                continue
            diff = lambda d, rm=refs[kind], rk=refs[matched]: (np.abs(d.mean(0) - rm).max()
                                                               - np.abs(d.mean(0) - rk).max())
            marg[kind] = bootstrap(diff, blocks, seed=cfg.seed + 7 * k + 1)
            if not marg[kind][0] >= 2 * marg[kind][1]:
                passed = False
        errors[b], margins[b] = err, marg
    return RegimeReport(N, list(cfg.b), m, errors, margins, passed, time.perf_counter() - t0, events)


# ------------------------------------------------------- martingale scaling


@dataclass
class MartingaleReport:
    levels: list[int]
    variance: dict[int, float]
    mean: dict[int, float]
    mean_se: dict[int, float]
    slope: float
    slope_ci: float
    doubling_ratio: float | None
    wall_time: float
    events: int

    def summary(self) -> str:
        v = ", ".join(f"N={N}: var={self.variance[N]:.3e}" for N in self.levels)
        s = f"{v}\nslope={self.slope:.3f}±{self.slope_ci:.3f} (reference -log 3 = {-math.log(3):.3f})"
        if self.doubling_ratio is not None:
            s += f"\nVar(2T)/Var(T) = {self.doubling_ratio:.3f}"
        return s


def martingale_scaling(cfg: ExperimentConfig, doubling_level: int | None = None) -> MartingaleReport:
    t0 = time.perf_counter()
    fam = cfg.rate_family()
    b = cfg.b[0]
    finals = {}
    variance, mean, mean_se = {}, {}, {}
    events = 0
    for k, N in enumerate(cfg.levels):
        params = kmc.SimParams(level=N, b=b, family=fam, T=cfg.T, lam_plus=cfg.lam_plus,
                               lam_minus=cfg.lam_minus, seed=cfg.seed + 100_000 * k, glauber=cfg.glauber)
        obs = kmc.run(params, replicas=cfg.replicas, sample_times=[cfg.T], rho0=cfg.rho0,
                      martingale=kmc.MartingaleSpec(tent(N)), workers=cfg.workers, sampler=cfg.sampler)
        events += obs.events
        M = obs.martingale[:, -1]
        finals[N] = M
        variance[N] = float(M.var(ddof=1))
        mean[N] = float(M.mean())
        mean_se[N] = float(M.std(ddof=1) / math.sqrt(M.size))
    lv = np.array(cfg.levels, float)

    def fit(data_by_level):
        return np.polyfit(lv, np.log([d.var(ddof=1) for d in data_by_level]), 1)[0]

    slope = float(fit([finals[N] for N in cfg.levels]))
    rng = np.random.default_rng(cfg.seed)
    boots = []
    for _ in range(500):
        boots.append(fit([finals[N][rng.integers(0, finals[N].size, finals[N].size)] for N in cfg.levels]))
    slope_ci = float(Z95 * np.std(boots, ddof=1))
    ratio = None
    if doubling_level is not None:
        params = kmc.SimParams(level=doubling_level, b=b, family=fam, T=2 * cfg.T, lam_plus=cfg.lam_plus,
                               lam_minus=cfg.lam_minus, seed=cfg.seed + 999_999, glauber=cfg.glauber)
        obs = kmc.run(params, replicas=cfg.replicas, sample_times=[cfg.T, 2 * cfg.T], rho0=cfg.rho0,
                      martingale=kmc.MartingaleSpec(tent(doubling_level)), workers=cfg.workers)
        events += obs.events
        ratio = float(obs.martingale[:, 1].var(ddof=1) / obs.martingale[:, 0].var(ddof=1))
    return MartingaleReport(list(cfg.levels), variance, mean, mean_se, slope, slope_ci, ratio,
                            time.perf_counter() - t0, events)


# --------------------------------------------------- replacement diagnostic


@dataclass
class ReplacementReport:
    level: int
    block_levels: list[int]
    one_block: dict[int, tuple[float, float]]
    two_block: dict[int, tuple[float, float]]
    skipped: dict[int, int]
    wall_time: float
    events: int

    def summary(self) -> str:
        rows = [f"M={M}: 1-block={self.one_block[M][0]:.4f}±{self.one_block[M][1]:.4f} "
                f"2-block={self.two_block[M][0]:.4f}±{self.two_block[M][1]:.4f} skipped={self.skipped[M]}"
                for M in self.block_levels]
        return "\n".join(rows)


MIN_BLOCK_SITES = 6


def replacement_diagnostic(cfg: ExperimentConfig) -> ReplacementReport:
    """Time-averaged 1-block and sibling 2-block quantities at the cell levels in ``extra['M']``."""
    t0 = time.perf_counter()
    N = cfg.levels[-1]
    Ms = [int(m) for m in cfg.extra.get("M", [1, 2, 3])]
    fam = cfg.rate_family()
    skipped = {}
    keep = []
    for M in Ms:
        size = 3 * (3 ** (N - M) - 1) // 2
        if size < MIN_BLOCK_SITES:
            skipped[M] = 3**M
        else:
            keep.append(M)
            skipped[M] = 0
    params = kmc.SimParams(level=N, b=cfg.b[0], family=fam, T=cfg.T, lam_plus=cfg.lam_plus,
                           lam_minus=cfg.lam_minus, seed=cfg.seed, glauber=cfg.glauber)
    obs = kmc.run(params, replicas=cfg.replicas, sample_times=[cfg.T], rho0=cfg.rho0,
                  blocks=kmc.BlockSpec(keep), workers=cfg.workers, sampler=cfg.sampler)
    one, two = {}, {}
    for k, M in enumerate(keep):
        valid = obs.block_valid[k]
        per_rep = obs.one_block[:, k, valid].mean(axis=1)
        one[M] = (float(per_rep.mean()), _ci(per_rep))
        if M >= 1:
            pv = obs.pair_valid[k]
            per_rep2 = obs.two_block[:, k, pv].mean(axis=1)
            two[M] = (float(per_rep2.mean()), _ci(per_rep2))
        else:
            two[M] = (float("nan"), float("nan"))
    for M in Ms:
        if M not in keep:
            one[M] = two[M] = (float("nan"), float("nan"))
    return ReplacementReport(N, Ms, one, two, skipped, time.perf_counter() - t0, obs.events)


def _ci(x: np.ndarray) -> float:
    return float(Z95 * x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf


def one_block_static(level: int, M: int, family: RateFamily, eta: np.ndarray) -> np.ndarray:
    """W_w(η) for every cell of level M, by direct evaluation."""
    from .gasket import cell_of_sites, site_shape
    from .rates import bits_to_code, rate_array

    g = build(level)
    phi = reaction(family)
    cells = cell_of_sites(g, M)
    inner = kmc.one_block_mask(g, M, family.L0)
    out = np.zeros(3**M)
    for c in range(3**M):
        sites = np.flatnonzero(cells == c)
        if sites.size == 0:
            out[c] = np.nan
            continue
        acc = 0.0
        for x in sites:
            if inner[x]:
                s, ball = site_shape(g, int(x), family.L0)
                rate = rate_array(family, s)[bits_to_code(eta[ball])]
                acc += rate * (1 - 2 * int(eta[x]))
        out[c] = abs(acc / sites.size - phi(eta[sites].mean()))
    return out


# ------------------------------------------------------ resistance scaling


@dataclass
class ResistanceReport:
    depth: int
    fit_levels: list[int]
    check_levels: list[int]
    C: float
    worst_ratio: dict[int, float]  # max R / (5/3)^{N-|ω|} per level
    samples: list[tuple]  # (N, |ω|, z, z', R)
    corner_ratios: list[float]
    holds: bool

    def summary(self) -> str:
        w = ", ".join(f"N={N}: {r:.4f}" for N, r in self.worst_ratio.items())
        return (f"C={self.C:.4f} fitted on N={self.fit_levels}; worst ratio per level: {w}; "
                f"envelope holds on N={self.check_levels}: {self.holds}")


def _cells_in_interior(level: int, depth: int, length: int) -> list[tuple[int, ...]]:
    """Words ω of the given length with K_ω inside K^I (no corner cell of the given depth as prefix)."""
    out = []
    for w in words(length):
        if length >= depth and all(c == w[0] for c in w[:depth]):
            continue
        out.append(w)
    return out


def resistance_scaling(fit_levels: Sequence[int] = (3, 4), check_levels: Sequence[int] = (5,), depth: int = 2,
                       pairs: int = 20, seed: int = 0) -> ResistanceReport:
    rng = np.random.default_rng(seed)
    samples = []
    worst: dict[int, float] = {}
    for N in sorted(set(fit_levels) | set(check_levels)):
        g = build(N)
        region = calculus.interior_region(g, depth)
        in_region = np.zeros(g.n_sites, bool)
        in_region[region] = True
        for L in range(depth, N):
            for w in _cells_in_interior(N, depth, L):
                sites = np.flatnonzero(in_cell_mask(g, w) & in_region)
                if sites.size < 2:
                    continue
                corners = sites[g.first_level[sites] <= L]
                cand = [tuple(corners[[0, 1]]), tuple(corners[[0, 2]]), tuple(corners[[1, 2]])] if corners.size == 3 else []
                for _ in range(pairs):
                    cand.append(tuple(rng.choice(sites, 2, replace=False)))
                for z, zp in cand:
                    R = calculus.effective_resistance(g, int(z), int(zp), region)
                    samples.append((N, L, int(z), int(zp), R))
                    worst[N] = max(worst.get(N, 0.0), R / (5 / 3) ** (N - L))
    C = max(worst[N] for N in fit_levels)
    # self-similarity makes the worst ratio repeat exactly across levels, so allow float slack
    holds = all(worst[N] <= C * (1 + 1e-9) for N in check_levels)
    corner = [calculus.effective_resistance(build(N + 1), 1, 2) / calculus.effective_resistance(build(N), 1, 2)
              for N in range(0, 4)]
    return ResistanceReport(depth, list(fit_levels), list(check_levels), C, worst, samples, corner, holds)


# ------------------------------------------------------------- exactness


@dataclass
class ExactnessCase:
    b: float
    family: RateFamily
    lam_plus: tuple
    lam_minus: tuple
    init_code: int
    t: float


def exactness_cases() -> list[ExactnessCase]:
    """Three parameter sets on V_1 covering the Dirichlet, Robin and Neumann scalings."""
    from .rates import constant, dfl, ising

    return [
        ExactnessCase(1.0, constant(1.0), (1.0,) * 3, (1.0,) * 3, 0, 0.05),
        ExactnessCase(5.0 / 3.0, dfl(0.5), (2.0,) * 3, (0.5,) * 3, 0, 0.05),
        ExactnessCase(3.0, ising(0.5), (0.3,) * 3, (1.2,) * 3, 63, 0.05),
    ]


@dataclass
class ExactnessResult:
    b: float
    tv: float
    noise_floor: float


def exactness(replicas: int = 100_000, seed: int = 11, cases: Sequence[ExactnessCase] | None = None):
    out = []
    for k, c in enumerate(cases or exactness_cases()):
        params = kmc.SimParams(level=1, b=c.b, family=c.family, T=c.t, lam_plus=c.lam_plus,
                               lam_minus=c.lam_minus, seed=seed + 1_000_000 * k)
        init = np.array([(c.init_code >> x) & 1 for x in range(6)], np.uint8)
        obs = kmc.run(params, replicas=replicas, sample_times=[c.t], init_state=init, snapshots=True)
        emp = exact.empirical_law(obs.snapshots[:, 0, :])
        p0 = np.zeros(64)
        p0[c.init_code] = 1.0
        law = exact.law_at(params, p0, c.t)
        floor = 0.5 * float(np.sum(np.sqrt(law * (1 - law) / replicas))) * math.sqrt(2 / math.pi)
        out.append(ExactnessResult(c.b, exact.total_variation(emp, law), floor))
    return out


# ------------------------------------------------------------ persistence


def save_report(report, cfg: ExperimentConfig | None, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    payload = {"report": type(report).__name__, "config": cfg.to_dict() if cfg else None,
               "wall_time": getattr(report, "wall_time", None), "events": getattr(report, "events", None),
               "summary": report.summary(),
               "seed_rule": ("replica r uses base + r; base = seed + 100000*k for the k-th level or b value, "
                             "seed + 999999 for the doubling run, seed + 1000000*k for exactness case k")}
    if isinstance(report, ConvergenceReport):
        write_csv(out / "convergence.csv", ["N", "f", "t", "sim_mean", "sim_ci", "pde"], report.table)
        write_csv(out / "errors.csv", ["N", "error", "ci", "error_one", "ci_one"],
                  [(N, report.error[N], report.error_ci[N], report.error_one[N], report.error_one_ci[N])
                   for N in report.levels])
        payload.update(decreasing=report.decreasing, separated=report.separated)
    elif isinstance(report, RegimeReport):
        rows = [(b, kind, e[0], e[1]) for b in report.bs for kind, e in report.errors[b].items()]
        write_csv(out / "regimes.csv", ["b", "pde_regime", "error", "ci"], rows)
        payload.update(passed=report.passed)
    elif isinstance(report, MartingaleReport):
        write_csv(out / "martingale.csv", ["N", "variance", "mean", "mean_se"],
                  [(N, report.variance[N], report.mean[N], report.mean_se[N]) for N in report.levels])
        payload.update(slope=report.slope, slope_ci=report.slope_ci)
    elif isinstance(report, ReplacementReport):
        write_csv(out / "replacement.csv", ["M", "one_block", "one_ci", "two_block", "two_ci", "skipped"],
                  [(M, *report.one_block[M], *report.two_block[M], report.skipped[M]) for M in report.block_levels])
    elif isinstance(report, ResistanceReport):
        write_csv(out / "resistance.csv", ["N", "omega_len", "z", "zp", "R"], report.samples)
        payload.update(C=report.C, holds=report.holds)
    write_manifest(out, payload)
    return out


def run_config(cfg: ExperimentConfig):
    """Dispatch on ``cfg.kind``; returns (report, passed)."""
    if cfg.kind == "converge":
        r = converge(cfg)
        ok = r.separated and r.error_one[cfg.levels[-1]] <= 0.05
    elif cfg.kind == "regime":
        r = regime_sweep(cfg)
        ok = r.passed
    elif cfg.kind == "martingale":
        r = martingale_scaling(cfg, doubling_level=cfg.extra.get("doubling_level"))
        ok = r.slope <= -math.log(3) + 0.3
    elif cfg.kind == "replacement":
        r = replacement_diagnostic(cfg)
        vals = [r.one_block[M][0] for M in r.block_levels if not math.isnan(r.one_block[M][0])]
        ok = all(np.isfinite(vals))
    elif cfg.kind == "resistance":
        r = resistance_scaling(seed=cfg.seed)
        ok = r.holds
    else:
        res = exactness(replicas=cfg.replicas, seed=cfg.seed)

        class _R:
            wall_time = None
            events = None

            def summary(self_inner):
                return "; ".join(f"b={x.b:.4g}: TV={x.tv:.4f} (floor {x.noise_floor:.4f})" for x in res)

        r = _R()
        ok = all(x.tv <= 0.01 for x in res)
    if cfg.out_dir:
        save_report(r, cfg, cfg.out_dir)
    return r, ok
