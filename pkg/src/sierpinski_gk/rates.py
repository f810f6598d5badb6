"""Local Glauber rate families and the reaction term Φ.

A rate family maps a shape and a local occupancy ``xi`` to a positive rate.
Occupancies are encoded as integers: bit ``k`` is ``xi[k]``, the occupation of
the ``k``-th point of the shape in canonical order (origin is bit 0).  Every
family can therefore be flattened to one float array of length ``2**size``
per shape, which is what the simulation kernel consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .gasket import GasketGraph, Shape, ShapeCatalog, build, shape_catalog


class RateError(ValueError):
    """Invalid, missing or nonpositive rate data."""


FAMILIES = ("constant", "dfl", "ising", "table")


@dataclass(frozen=True)
class RateFamily:
    kind: str
    c0: float = 1.0
    gamma: float = 0.0
    beta: float = 0.0
    L0: int = 1
    # shape key -> rates indexed by occupancy code
    table: Mapping[str, np.ndarray] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise RateError(f"unknown family {self.kind!r}; expected one of {FAMILIES}")
        if self.kind == "dfl" and not 0.0 <= self.gamma < 1.0:
            raise RateError("DFL needs 0 <= gamma < 1")
        if self.kind == "ising" and self.beta < 0:
            raise RateError("Ising needs beta >= 0")
        if self.kind == "constant" and not self.c0 > 0:
            raise RateError("constant rate must be positive")
        if self.L0 < 1:
            raise RateError("L0 must be at least 1")

    @property
    def params(self) -> dict:
        d = {"family": self.kind, "L0": self.L0}
        if self.kind == "constant":
            d["c0"] = self.c0
        elif self.kind == "dfl":
            d["gamma"] = self.gamma
        elif self.kind == "ising":
            d["beta"] = self.beta
        return d


def constant(c0: float = 1.0) -> RateFamily:
    return RateFamily("constant", c0=c0)


def dfl(gamma: float) -> RateFamily:
    return RateFamily("dfl", gamma=gamma)


def ising(beta: float) -> RateFamily:
    return RateFamily("ising", beta=beta)


def from_table(doc: Mapping[str, Mapping[str, float]], L0: int) -> RateFamily:
    """Build a table family from ``{shape_key: {bits: rate}}``.

    ``bits`` is a string of 0/1 characters, character ``k`` being ``xi[k]``.
    Every occupancy of every listed shape must be present.
    """
    table = {}
    for key, entries in doc.items():
        lengths = {len(b) for b in entries}
        if len(lengths) != 1:
            raise RateError(f"shape {key}: bit strings of mixed length")
        n = lengths.pop()
        arr = np.full(2**n, np.nan)
        for bits, r in entries.items():
            if set(bits) - {"0", "1"}:
                raise RateError(f"shape {key}: bad bit string {bits!r}")
            arr[int(bits[::-1], 2)] = float(r)
        missing = np.flatnonzero(np.isnan(arr))
        if missing.size:
            raise RateError(f"shape {key}: missing occupancy {code_to_bits(int(missing[0]), n)}")
        arr.setflags(write=False)
        table[key] = arr
    return RateFamily("table", L0=L0, table=table)


def load_table(path: str, L0: int | None = None) -> RateFamily:
    with open(path) as fh:
        doc = json.load(fh)
    if L0 is None:
        L0 = int(doc.pop("L0", 1)) if "L0" in doc else 1
    else:
        doc.pop("L0", None)
    return from_table(doc, L0)


def code_to_bits(code: int, n: int) -> str:
    return "".join("1" if code >> k & 1 else "0" for k in range(n))


def bits_to_code(xi: Sequence[int]) -> int:
    return sum(int(v) << k for k, v in enumerate(xi))


def collinear_pair(shape: Shape) -> tuple[int, int]:
    """First pair of origin neighbours on opposite sides of the origin."""
    nb = shape.origin_nbrs
    for a in nb:
        pa = shape.points[a]
        for b in nb:
            if b > a and shape.points[b] == (-pa[0], -pa[1]):
                return a, b
    raise RateError(f"shape {shape.key} has no collinear neighbour pair")


def _occupancy_matrix(n: int) -> np.ndarray:
    codes = np.arange(2**n)
    return (codes[:, None] >> np.arange(n)[None, :]) & 1


def rate_array(family: RateFamily, shape: Shape) -> np.ndarray:
    """Rates for every occupancy of ``shape``, indexed by occupancy code."""
    n = shape.size
    if family.kind == "table":
        try:
            arr = family.table[shape.key]
        except KeyError:
            raise RateError(f"no table entry for shape {shape.key}") from None
        if arr.size != 2**n:
            raise RateError(f"shape {shape.key}: table has {arr.size} entries, expected {2**n}")
        return np.asarray(arr, dtype=float)
    xi = _occupancy_matrix(n)
    if family.kind == "constant":
        return np.full(2**n, float(family.c0))
    if family.kind == "dfl":
        g = family.gamma
        i1, i2 = collinear_pair(shape)
        x0, x1, x2 = xi[:, 0], xi[:, i1], xi[:, i2]
        return np.where(
            x1 != x2,
            1.0 - g * g,
            np.where(x0 == x1, 1.0 - 2 * g + g * g, 1.0 + 2 * g + g * g),
        )
    # ising
    s = 2 * xi - 1
    field_ = s[:, list(shape.origin_nbrs)].sum(axis=1)
    return np.exp(-family.beta * s[:, 0] * field_)


def rate(family: RateFamily, shape: Shape, xi: Sequence[int]) -> float:
    if len(xi) != shape.size:
        raise RateError(f"occupancy has {len(xi)} entries, shape has {shape.size}")
    return float(rate_array(family, shape)[bits_to_code(xi)])


@dataclass(frozen=True)
class Validation:
    max_rate: float
    min_rate: float
    argmax: tuple[str, str]


def validate(family: RateFamily, catalog: ShapeCatalog) -> Validation:
    """Check positivity over every (shape, occupancy) and report ‖c‖∞."""
    best = (-math.inf, "", "")
    lo = math.inf
    for shape in catalog.shapes:
        arr = rate_array(family, shape)
        bad = np.flatnonzero(~(arr > 0) | ~np.isfinite(arr))
        if bad.size:
            bits = code_to_bits(int(bad[0]), shape.size)
            raise RateError(f"nonpositive or invalid rate {arr[bad[0]]} at shape {shape.key}, xi={bits}")
        k = int(np.argmax(arr))
        if arr[k] > best[0]:
            best = (float(arr[k]), shape.key, code_to_bits(k, shape.size))
        lo = min(lo, float(arr.min()))
    return Validation(max_rate=best[0], min_rate=lo, argmax=(best[1], best[2]))


def default_catalog(family: RateFamily, level: int | None = None) -> ShapeCatalog:
    """Catalog used to weight Φ: the exact one for L0 = 1, else the finest built level."""
    if level is None:
        level = max(family.L0 + 2, 3) if family.L0 == 1 else min(family.L0 + 5, 8)
    return shape_catalog(build(level), family.L0)


def ratio_drift(L0: int, level: int) -> float:
    """max |r^N - r^{N-1}| over shapes, a stabilization indicator for the ratios."""
    a = shape_catalog(build(level), L0)
    b = shape_catalog(build(level - 1), L0)
    rb = dict(zip(b.shapes, b.ratios))
    return float(max(abs(r - rb.get(s, Fraction(0))) for s, r in zip(a.shapes, a.ratios)))


def _shape_polynomial(family: RateFamily, shape: Shape) -> Polynomial:
    """E_{ν_ρ}[(1 - 2ξ_0) c(ξ; Λ)] as a polynomial in ρ."""
    n = shape.size
    arr = rate_array(family, shape)
    xi = _occupancy_matrix(n)
    ones = xi.sum(axis=1)
    signed = (1 - 2 * xi[:, 0]) * arr
    agg = np.bincount(ones, weights=signed, minlength=n + 1)
    rho = Polynomial([0.0, 1.0])
    out = Polynomial([0.0])
    for k in range(n + 1):
        if agg[k] != 0.0:
            out = out + agg[k] * rho**k * (1 - rho) ** (n - k)
    return out


def phi_polynomial(family: RateFamily, catalog: ShapeCatalog | None = None) -> Polynomial:
    """Φ as a numpy Polynomial in ρ (ascending coefficients), trailing zeros trimmed."""
    catalog = catalog or default_catalog(family)
    total = Polynomial([0.0])
    for shape, r in zip(catalog.shapes, catalog.ratios):
        if r:
            total = total + float(r) * _shape_polynomial(family, shape)
    return total.trim(tol=1e-13)


def phi(family: RateFamily, catalog: ShapeCatalog | None, rho) -> np.ndarray | float:
    """Φ(ρ) by direct Bernoulli-weighted enumeration (independent of ``phi_polynomial``)."""
    catalog = catalog or default_catalog(family)
    r_arr = np.atleast_1d(np.asarray(rho, dtype=float))
    out = np.zeros_like(r_arr)
    for shape, ratio in zip(catalog.shapes, catalog.ratios):
        if not ratio:
            continue
        xi = _occupancy_matrix(shape.size)
        arr = rate_array(family, shape)
        k = xi.sum(axis=1)
        w = r_arr[:, None] ** k[None, :] * (1 - r_arr[:, None]) ** (shape.size - k)[None, :]
        out += float(ratio) * (w @ ((1 - 2 * xi[:, 0]) * arr))
    return out if np.ndim(rho) else float(out[0])


def dfl_closed_form(gamma: float, rho):
    s = 2 * np.asarray(rho, dtype=float) - 1
    return -gamma**2 * s**3 + (2 * gamma - 1) * s


@dataclass(frozen=True)
class ReactionFn:
    """Φ together with its Lipschitz constant on [0, 1]."""

    poly: Polynomial
    lipschitz: float

    def __call__(self, rho):
        return self.poly(rho)

    @property
    def coefficients(self) -> list[float]:
        return [float(c) for c in self.poly.coef]

    @classmethod
    def from_polynomial(cls, poly: Polynomial) -> "ReactionFn":
        d = poly.deriv()
        cand = [0.0, 1.0]
        if d.degree() >= 1:
            cand += [float(r.real) for r in d.deriv().roots() if abs(r.imag) < 1e-12 and 0 <= r.real <= 1]
        return cls(poly=poly, lipschitz=float(max(abs(d(c)) for c in cand)))

    @classmethod
    def zero(cls) -> "ReactionFn":
        return cls(Polynomial([0.0]), 0.0)


def reaction(family: RateFamily | None, catalog: ShapeCatalog | None = None) -> ReactionFn:
    if family is None:
        return ReactionFn.zero()
    return ReactionFn.from_polynomial(phi_polynomial(family, catalog))


def parse_family(name: str, *, gamma: float = 0.0, beta: float = 0.0, c0: float = 1.0,
                 table: str | None = None, L0: int | None = None) -> RateFamily:
    if name == "constant":
        return constant(c0)
    if name == "dfl":
        return dfl(gamma)
    if name == "ising":
        return ising(beta)
    if name == "table":
        if table is None:
            raise RateError("table family needs a JSON file")
        return load_table(table, L0)
    raise RateError(f"unknown family {name!r}")


def family_arrays(family: RateFamily, g: GasketGraph):
    """Per-site flattened rate data for the simulation kernel.

    Returns ``(ball, ball_len, rate_off, rates, cmax)``: the ordered Λ_x of each
    interior site (-1 padded), the offset of its shape's rate block inside the
    flat ``rates`` array and ‖c‖∞ over the shapes that occur.
    """
    from .gasket import site_shapes

    shapes, shape_of, ordered = site_shapes(g, family.L0)
    blocks = [rate_array(family, s) for s in shapes]
    for s, arr in zip(shapes, blocks):
        if not np.all(arr > 0):
            raise RateError(f"nonpositive rate for shape {s.key}")
    offsets = np.cumsum([0] + [b.size for b in blocks])
    rates = np.concatenate(blocks) if blocks else np.zeros(0)
    width = max((s.size for s in shapes), default=1)
    n = g.n_sites
    ball = -np.ones((n, width), dtype=np.int64)
    ball_len = np.zeros(n, dtype=np.int64)
    rate_off = np.zeros(n, dtype=np.int64)
    for x in range(3, n):
        b = ordered[x]
        ball[x, : b.size] = b
        ball_len[x] = b.size
        rate_off[x] = offsets[shape_of[x]]
    cmax = float(rates.max()) if rates.size else 0.0
    return ball, ball_len, rate_off, rates, cmax
