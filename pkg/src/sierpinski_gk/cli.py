"""Command-line entry point (``sgk``)."""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _add_family(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", default="dfl", choices=["constant", "dfl", "ising", "table"])
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--c0", type=float, default=1.0)
    p.add_argument("--table", help="JSON rate table {shape_hash: {bits: rate}}")
    p.add_argument("--L0", type=int, default=None, help="neighbourhood range for table families")


def _family(args):
    from .rates import parse_family

    return parse_family(args.family, gamma=args.gamma, beta=args.beta, c0=args.c0, table=args.table, L0=args.L0)


def _open_out(path):
    if path and path != "-":
        return open(path, "w", newline="")
    return contextlib.nullcontext(sys.stdout)


# ------------------------------------------------------------------ gasket


def cmd_gasket_dump(args) -> int:
    from .gasket import build, dump

    edges, sites = dump(build(args.level))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"edges_{args.level}.txt").write_text(edges)
        (out / f"sites_{args.level}.txt").write_text(sites)
    else:
        sys.stdout.write("# edges\n" + edges + "# sites\n" + sites)
    return 0


def cmd_gasket_shapes(args) -> int:
    from .gasket import build, shape_catalog

    cat = shape_catalog(build(args.level), args.L0)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["key", "size", "count", "ratio", "exceptional", "points"])
    for s, c, r, ex in zip(cat.shapes, cat.counts, cat.ratios, cat.exceptional):
        w.writerow([s.key, s.size, c, str(r), int(ex), " ".join(f"{i},{j}" for i, j in s.points)])
    return 0


# ------------------------------------------------------------------- rates


def cmd_rates_phi(args) -> int:
    from .rates import phi

    fam = _family(args)
    grid = np.linspace(0.0, 1.0, args.grid)
    vals = phi(fam, None, grid)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rho", "phi"])
        for r, v in zip(grid, vals):
            w.writerow([repr(float(r)), repr(float(v))])
    return 0


def cmd_rates_validate(args) -> int:
    from .rates import default_catalog, validate

    fam = _family(args)
    v = validate(fam, default_catalog(fam))
    print(json.dumps({"max_rate": v.max_rate, "min_rate": v.min_rate, "argmax": list(v.argmax)}))
    return 0


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    from . import harness, kmc
    from .gasket import build, cell_sites, words

    fam = _family(args)
    params = kmc.SimParams(level=args.level, b=args.b, family=fam, T=args.T,
                           lam_plus=_floats(args.lam_plus), lam_minus=_floats(args.lam_minus),
                           seed=args.seed, glauber=not args.no_glauber, reservoirs=not args.no_reservoirs)
    times = _floats(args.samples) if args.samples else list(np.linspace(0, args.T, 11))
    names, F = harness.default_tests(args.level)
    t0 = time.perf_counter()
    obs = kmc.run(params, replicas=args.replicas, sample_times=times, rho0=args.rho0, test_functions=F,
                  snapshots=True, workers=args.workers, sampler=args.sampler)
    wall = time.perf_counter() - t0
    out = Path(args.out)
    harness.write_csv(out / "empirical.csv", ["replica", "t", "f", "value"],
                      ((r, t, names[f], obs.observables[r, s, f]) for r in range(obs.replicas)
                       for s, t in enumerate(obs.sample_times) for f in range(len(names))))
    g = build(args.level)
    m = min(args.block_level, args.level - 1)
    cells = [(w, cell_sites(g, w)) for w in words(m)]
    harness.write_csv(out / "blocks.csv", ["replica", "t", "cell", "mean"],
                      ((r, t, "".join(map(str, w)) or "-", float(obs.snapshots[r, s, c].mean()))
                       for r in range(obs.replicas) for s, t in enumerate(obs.sample_times) for w, c in cells))
    harness.write_csv(out / "boundary.csv", ["replica", "t", "a0", "a1", "a2"],
                      ((r, t, *obs.snapshots[r, s, :3].tolist()) for r in range(obs.replicas)
                       for s, t in enumerate(obs.sample_times)))
    harness.write_manifest(out, {"command": "simulate", "params": params.as_dict(), "replicas": args.replicas,
                                 "seeds": [args.seed + r for r in range(args.replicas)], "rho0": args.rho0,
                                 "sampler": args.sampler, "sample_times": list(map(float, obs.sample_times)),
                                 "wall_time": wall, "events": obs.events,
                                 "event_counts": {"swap": int(obs.counts[:, 0].sum()),
                                                  "flip_accepted": int(obs.counts[:, 1].sum()),
                                                  "flip_rejected": int(obs.counts[:, 2].sum()),
                                                  "reservoir": int(obs.counts[:, 3].sum())}})
    print(f"{obs.events} events in {wall:.2f}s -> {out}")
    return 0


# ---------------------------------------------------------------- calculus


def cmd_calculus_resist(args) -> int:
    from .calculus import effective_resistance, interior_region
    from .gasket import build

    g = build(args.level)
    sites = interior_region(g, args.depth) if args.interior else None
    print(repr(effective_resistance(g, args.from_, args.to, sites)))
    return 0


def cmd_calculus_extend(args) -> int:
    from .calculus import harmonic_extension

    vals = _read_site_values(args.input)
    f = harmonic_extension(vals, args.to_level)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site_id", "value"])
        for x, v in enumerate(f):
            w.writerow([x, repr(float(v))])
    return 0


def _read_site_values(path: str) -> np.ndarray:
    """CSV with columns site_id,value (header optional), ids 0..n-1."""
    rows = []
    with open(path) as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append((int(row[0]), float(row[1])))
            except ValueError:
                continue  # header
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise SystemExit("site ids must be 0..n-1 without gaps")
    return np.array([r[1] for r in rows])


# ------------------------------------------------------------------- solve


def cmd_solve(args) -> int:
    from . import pde
    from .rates import reaction

    rho_B = _floats(args.rhoB)
    if args.bc == "dirichlet":
        bc = pde.BoundaryCondition.dirichlet(rho_B)
    elif args.bc == "robin":
        bc = pde.BoundaryCondition.robin(rho_B, _floats(args.r) if "," in args.r else [float(args.r)] * 3)
    else:
        bc = pde.BoundaryCondition.neumann(rho_B)
    phi = reaction(None) if args.family == "none" else reaction(_family(args))
    times = _floats(args.samples) if args.samples else [args.T]
    tr = pde.solve(args.level, bc, phi, args.rho0, args.T, dt=args.dt, sample_times=times)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "site_id", "rho"])
        for t, x, v in tr.rows():
            w.writerow([repr(float(t)), x, repr(float(v))])
    return 0


# -------------------------------------------------------------- experiment


def cmd_experiment(args) -> int:
    from .harness import ExperimentConfig, run_config

    cfg = ExperimentConfig.from_json(args.config)
    if args.out:
        cfg.out_dir = args.out
    report, ok = run_config(cfg)
    print(report.summary())
    print("PASS" if ok else "FAIL")
    return 1 if (args.check and not ok) else 0


# -------------------------------------------------------------------- plot


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .gasket import build

    fig, ax = plt.subplots(figsize=(5, 4.5))
    if args.kind == "solution":
        data = np.loadtxt(args.input, delimiter=",", skiprows=1)
        t_last = data[:, 0].max() if args.t is None else args.t
        rows = data[np.isclose(data[:, 0], t_last)]
        ids = rows[:, 1].astype(int)
        level = next(M for M in range(13) if 3 * (3**M + 1) // 2 == ids.max() + 1)
        xy = build(level).xy[ids]
        sc = ax.scatter(xy[:, 0], xy[:, 1], c=rows[:, 2], s=8, cmap="viridis", vmin=0, vmax=1)
        fig.colorbar(sc, ax=ax, label="density")
        ax.set_aspect("equal")
        ax.set_title(f"t = {t_last:g}")
    else:
        data = np.genfromtxt(args.input, delimiter=",", names=True)
        ax.errorbar(data["N"], data["error"], yerr=data["ci"], marker="o", capsize=3, label="max over f, t")
        ax.errorbar(data["N"], data["error_one"], yerr=data["ci_one"], marker="s", capsize=3, label="f = 1")
        ax.set_xlabel("level N")
        ax.set_ylabel("|simulation - PDE|")
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, format="svg")
    print(args.out)
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgk", description="Particle systems and reaction-diffusion on the Sierpinski gasket")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gasket", help="graph export and shape catalog")
    gs = g.add_subparsers(dest="action", required=True)
    d = gs.add_parser("dump", help="edge list and exact site table")
    d.add_argument("--level", type=int, required=True)
    d.add_argument("--out", help="directory for edges_N.txt / sites_N.txt (default stdout)")
    d.set_defaults(func=cmd_gasket_dump)
    s = gs.add_parser("shapes", help="shape catalog with exact frequencies")
    s.add_argument("--level", type=int, default=5)
    s.add_argument("--L0", type=int, default=1)
    s.set_defaults(func=cmd_gasket_shapes)

    r = sub.add_parser("rates", help="reaction term and rate validation")
    rs = r.add_subparsers(dest="action", required=True)
    ph = rs.add_parser("phi", help="tabulate Φ on a uniform grid")
    _add_family(ph)
    ph.add_argument("--grid", type=int, default=101)
    ph.add_argument("--out")
    ph.set_defaults(func=cmd_rates_phi)
    va = rs.add_parser("validate", help="check positivity and report the max rate")
    _add_family(va)
    va.set_defaults(func=cmd_rates_validate)

    sm = sub.add_parser("simulate", help="run the particle system")
    sm.add_argument("--level", type=int, required=True)
    sm.add_argument("--b", type=float, default=1.0)
    _add_family(sm)
    sm.add_argument("--lam-plus", default="1,1,1")
    sm.add_argument("--lam-minus", default="1,1,1")
    sm.add_argument("--rho0", default="const:0.5")
    sm.add_argument("--T", type=float, required=True)
    sm.add_argument("--samples", help="comma-separated sample times (default 11 equispaced)")
    sm.add_argument("--replicas", type=int, default=1)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--workers", type=int, default=1)
    sm.add_argument("--sampler", default="bernoulli", choices=["bernoulli", "stratified"])
    sm.add_argument("--block-level", type=int, default=1)
    sm.add_argument("--no-glauber", action="store_true")
    sm.add_argument("--no-reservoirs", action="store_true")
    sm.add_argument("--out", required=True)
    sm.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calculus", help="resistance and harmonic extension")
    cs = c.add_subparsers(dest="action", required=True)
    rz = cs.add_parser("resist", help="effective resistance between two sites")
    rz.add_argument("--level", type=int, required=True)
    rz.add_argument("--interior", action="store_true", help="restrict to V_N minus the corner cells")
    rz.add_argument("--depth", type=int, default=2, help="level of the removed corner cells")
    rz.add_argument("--from", dest="from_", type=int, required=True)
    rz.add_argument("--to", type=int, required=True)
    rz.set_defaults(func=cmd_calculus_resist)
    ex = cs.add_parser("extend", help="harmonic extension of site data")
    ex.add_argument("--input", required=True, help="CSV site_id,value on V_M")
    ex.add_argument("--to-level", type=int, required=True)
    ex.add_argument("--out")
    ex.set_defaults(func=cmd_calculus_extend)

    so = sub.add_parser("solve", help="solve the reaction-diffusion equation")
    so.add_argument("--level", type=int, required=True)
    so.add_argument("--bc", choices=["dirichlet", "robin", "neumann"], default="dirichlet")
    so.add_argument("--rhoB", default="0.5,0.5,0.5")
    so.add_argument("--r", default="1", help="Robin coefficient(s)")
    so.add_argument("--family", default="dfl", choices=["none", "constant", "dfl", "ising", "table"])
    so.add_argument("--gamma", type=float, default=0.0)
    so.add_argument("--beta", type=float, default=0.0)
    so.add_argument("--c0", type=float, default=1.0)
    so.add_argument("--table")
    so.add_argument("--L0", type=int, default=None)
    so.add_argument("--rho0", default="const:0.5")
    so.add_argument("--T", type=float, required=True)
    so.add_argument("--dt", type=float, default=None)
    so.add_argument("--samples")
    so.add_argument("--out")
    so.set_defaults(func=cmd_solve)

    e = sub.add_parser("experiment", help="run an experiment from a JSON config")
    e.add_argument("config")
    e.add_argument("--out")
    e.add_argument("--check", action="store_true", help="exit nonzero if the acceptance check fails")
    e.set_defaults(func=cmd_experiment)

    pl = sub.add_parser("plot", help="static SVG figures")
    pl.add_argument("kind", choices=["solution", "errors"])
    pl.add_argument("input")
    pl.add_argument("--out", required=True)
    pl.add_argument("--t", type=float, default=None)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:  # every library error derives from ValueError
        print(f"sgk: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
