"""Initial-density profiles given as short text specs.

``const:v``            constant v
``linear:a,b,c``       a + b*x + c*y
``harmonic:r0,r1,r2``  harmonic extension of corner values (r0 at a_0, ...)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gasket import GasketGraph


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class Profile:
    kind: str
    args: tuple[float, ...]

    @property
    def spec(self) -> str:
        return f"{self.kind}:" + ",".join(repr(a) for a in self.args)

    def __call__(self, g: GasketGraph) -> np.ndarray:
        if self.kind == "const":
            return np.full(g.n_sites, self.args[0])
        if self.kind == "linear":
            a, b, c = self.args
            xy = g.xy
            return a + b * xy[:, 0] + c * xy[:, 1]
        from .calculus import harmonic_extension

        return harmonic_extension(np.array(self.args), g.level)


_ARITY = {"const": 1, "linear": 3, "harmonic": 3}


def parse(spec: str) -> Profile:
    kind, _, rest = spec.partition(":")
    if kind not in _ARITY:
        raise ProfileError(f"unknown profile kind {kind!r} in {spec!r}")
    try:
        args = tuple(float(v) for v in rest.split(",")) if rest else ()
    except ValueError:
        raise ProfileError(f"bad numbers in profile {spec!r}") from None
    if len(args) != _ARITY[kind]:
        raise ProfileError(f"profile {kind} takes {_ARITY[kind]} values, got {len(args)}")
    return Profile(kind, args)


def evaluate(profile: str | Profile | np.ndarray, g: GasketGraph) -> np.ndarray:
    if isinstance(profile, str):
        profile = parse(profile)
    if isinstance(profile, Profile):
        return profile(g)
    arr = np.asarray(profile, dtype=float)
    if arr.shape != (g.n_sites,):
        raise ProfileError(f"profile array has shape {arr.shape}, expected ({g.n_sites},)")
    return arr
