"""Method-of-lines solver for ∂_t ρ = (2/3)Δρ + Φ(ρ) on V_M.

Scaling note: (3/2)Δ_M converges to the gasket Laplacian Δ, so the operator
(2/3)Δ is discretized by Δ_M itself.  There is no extra 2/3 factor anywhere in
the scheme.

Interior values evolve by classical RK4.  Boundary values are not evolved;
they are recomputed from the interior at every stage:

* Dirichlet: ρ(a) = ρ_B(a).
* Robin / Neumann: the discrete flux relation
  (5/3)^M Σ_{y~a} (ρ(a) - ρ(y)) = -r(a) (ρ(a) - ρ_B(a)) solved for ρ(a).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .calculus import laplacian, normal_derivatives
from .gasket import GasketGraph, build, n_sites
from .profiles import evaluate
from .rates import ReactionFn

REGIMES = ("dirichlet", "robin", "neumann")
RANGE_SLACK = 1e-9


class PDEError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str
    rho_B: tuple[float, float, float] = (0.5, 0.5, 0.5)
    r: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in REGIMES:
            raise PDEError(f"unknown boundary regime {self.kind!r}")
        if len(self.rho_B) != 3 or len(self.r) != 3:
            raise PDEError("rho_B and r need one value per corner")
        if self.kind == "neumann" and any(v != 0 for v in self.r):
            raise PDEError("Neumann forces r = 0")
        if any(v < 0 for v in self.r):
            raise PDEError("Robin coefficients must be nonnegative")

    @classmethod
    def dirichlet(cls, rho_B) -> "BoundaryCondition":
        return cls("dirichlet", tuple(float(v) for v in rho_B))

    @classmethod
    def robin(cls, rho_B, r) -> "BoundaryCondition":
        return cls("robin", tuple(float(v) for v in rho_B), tuple(float(v) for v in r))

    @classmethod
    def neumann(cls, rho_B=(0.5, 0.5, 0.5)) -> "BoundaryCondition":
        return cls("neumann", tuple(float(v) for v in rho_B))

    @classmethod
    def for_reservoirs(cls, b: float, lam_plus, lam_minus, kind: str | None = None) -> "BoundaryCondition":
        """Limit boundary condition for slowdown exponent b (or a forced regime)."""
        lp = np.broadcast_to(np.asarray(lam_plus, dtype=float), (3,))
        lm = np.broadcast_to(np.asarray(lam_minus, dtype=float), (3,))
        rho_B = lp / (lp + lm)
        if kind is None:
            kind = regime_of(b)
        if kind == "dirichlet":
            return cls.dirichlet(rho_B)
        if kind == "robin":
            return cls.robin(rho_B, lp + lm)
        return cls.neumann(rho_B)

    def with_kind(self, kind: str, r=None) -> "BoundaryCondition":
        if kind == "robin":
            return BoundaryCondition.robin(self.rho_B, self.r if r is None else r)
        return BoundaryCondition(kind, self.rho_B)


def regime_of(b: float, tol: float = 1e-12) -> str:
    if abs(b - 5.0 / 3.0) <= tol:
        return "robin"
    return "dirichlet" if b < 5.0 / 3.0 else "neumann"


def max_stable_dt(M: int, lipschitz: float = 0.0) -> float:
    """0.8 / (8·5^M + L_Φ); equals 0.1·5^{-M} when Φ is constant."""
    return 0.8 / (8.0 * 5.0**M + lipschitz)


class _System:
    """Right-hand side and boundary elimination for one level."""

    def __init__(self, g: GasketGraph, bc: BoundaryCondition, phi: ReactionFn):
        if g.level < 1:
            raise PDEError("the PDE needs M >= 1 so that V_M has interior sites")
        self.g = g
        self.bc = bc
        self.coef = np.asarray(phi.poly.coef, dtype=float)
        self.zero_phi = not np.any(self.coef)
        self.scale = 5.0**g.level
        self.adj_int = g.adjacency[3:].tocsr()
        self.bnbrs = np.array([g.neighbors(a) for a in (0, 1, 2)])
        self.rho_B = np.array(bc.rho_B)
        self.r = np.array(bc.r)
        self.k = (5.0 / 3.0) ** g.level

    def full(self, u: np.ndarray) -> np.ndarray:
        rho = np.empty(self.g.n_sites)
        rho[3:] = u
        if self.bc.kind == "dirichlet":
            rho[:3] = self.rho_B
        else:
            # boundary neighbours are interior for M >= 1
            s = rho[self.bnbrs].sum(axis=1)
            rho[:3] = (self.k * s + self.r * self.rho_B) / (2 * self.k + self.r)
        return rho

    def rhs(self, u: np.ndarray) -> np.ndarray:
        rho = self.full(u)
        out = self.scale * (self.adj_int @ rho - 4.0 * u)
        if not self.zero_phi:
            out += P.polyval(u, self.coef)
        return out

    def step(self, u: np.ndarray, dt: float) -> np.ndarray:
        k1 = self.rhs(u)
        k2 = self.rhs(u + 0.5 * dt * k1)
        k3 = self.rhs(u + 0.5 * dt * k2)
        k4 = self.rhs(u + dt * k3)
        return u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class Trajectory:
    level: int
    times: np.ndarray
    values: np.ndarray  # (len(times), |V_M|) including boundary values
    bc: BoundaryCondition
    dt: float
    meta: dict = field(default_factory=dict)

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise PDEError(f"time {t} was not sampled")
        return self.values[k]

    def rows(self):
        for t, v in zip(self.times, self.values):
            for x, val in enumerate(v):
                yield t, x, val


def solve(
    M: int,
    bc: BoundaryCondition,
    phi: ReactionFn,
    rho0,
    T: float,
    dt: float | None = None,
    sample_times: Sequence[float] | None = None,
    every_step: bool = False,
    check_range: bool = True,
    steady_tol: float | None = None,
) -> Trajectory:
    """Integrate to time T and return the sampled trajectory.

    ``rho0`` is an array on V_M or a profile spec.  ``dt`` defaults to the
    stability bound and is shrunk so that every sample time is hit exactly.
    With ``steady_tol`` set, integration stops early once the sup norm of
    the time derivative falls below it.
    """
    g = build(M)
    if T < 0:
        raise PDEError("T must be nonnegative")
    bound = max_stable_dt(M, phi.lipschitz)
    if dt is None:
        dt = bound
    elif dt > bound * (1 + 1e-12):
        raise PDEError(f"dt={dt:g} exceeds the stability bound {bound:g}")
    sys_ = _System(g, bc, phi)
    rho = evaluate(rho0, g)
    if check_range and (rho.min() < 0 or rho.max() > 1):
        raise PDEError("initial density must lie in [0, 1]")
    u = rho[3:].astype(float).copy()
    if sample_times is None:
        sample_times = [T]
    targets = sorted(set(float(t) for t in sample_times) | {0.0})
    if targets[-1] > T + 1e-15:
        raise PDEError("sample time beyond T")
    times = [0.0]
    values = [sys_.full(u)]
    t = 0.0
    n_steps = 0
    for target in targets[1:]:
        span = target - t
        n = max(1, math.ceil(span / dt - 1e-9))
        h = span / n
        for s in range(n):
            u = sys_.step(u, h)
            n_steps += 1
            if check_range and (u.min() < -RANGE_SLACK or u.max() > 1 + RANGE_SLACK):
                raise PDEError(f"solution left [0, 1] near t={t + (s + 1) * h:.6g}; unstable step?")
            if every_step and s < n - 1:
                times.append(t + (s + 1) * h)
                values.append(sys_.full(u))
            if steady_tol is not None and np.abs(sys_.rhs(u)).max() < steady_tol:
                t = t + (s + 1) * h
                times.append(t)
                values.append(sys_.full(u))
                return Trajectory(M, np.array(times), np.array(values), bc, h,
                                  {"steps": n_steps, "steady": True})
        t = target
        times.append(t)
        values.append(sys_.full(u))
    return Trajectory(M, np.array(times), np.array(values), bc, dt, {"steps": n_steps})


def time_derivative(traj: Trajectory, phi: ReactionFn, k: int = -1) -> np.ndarray:
    sys_ = _System(build(traj.level), traj.bc, phi)
    return sys_.rhs(traj.values[k][3:])


# ------------------------------------------------------------ weak form


def weak_residual(
    traj: Trajectory,
    F: np.ndarray | Callable[[float], np.ndarray],
    phi: ReactionFn,
    dF: Callable[[float], np.ndarray] | None = None,
) -> np.ndarray:
    """Discrete weak-form residual Θ_t at every stored time.

    Θ_t = ⟨ρ_t, F_t⟩ - ⟨ρ_0, F_0⟩ - ∫_0^t ⟨ρ_s, ∂_s F + Δ_M F⟩ + ⟨Φ(ρ_s), F⟩ + B_s ds

    with ⟨u, v⟩ = |V_M|^{-1} Σ_{V_M^0} u v and boundary term
    B = -κ Σ_a [ρ(a) ∂^⊥F(a) + r(a)(ρ(a) - ρ_B(a)) F(a)],  κ = 3^M / |V_M| → 2/3.
    Dirichlet data needs F = 0 on V_0.  Time integral: trapezoid rule.
    """
    g = build(traj.level)
    nV = g.n_sites
    kappa = 3.0**traj.level / nV
    coef = np.asarray(phi.poly.coef, dtype=float)
    Ffun = F if callable(F) else (lambda t, _F=np.asarray(F, dtype=float): _F)
    if dF is None:
        dF = lambda t: np.zeros(nV)  # noqa: E731
    rho_B = np.array(traj.bc.rho_B)
    r = np.array(traj.bc.r)
    vals_now = []
    integrand = []
    for t, rho in zip(traj.times, traj.values):
        Ft = np.asarray(Ffun(t), dtype=float)
        if Ft.shape != (nV,):
            raise PDEError("test function has the wrong length")
        if traj.bc.kind == "dirichlet" and np.any(np.abs(Ft[:3]) > 1e-12):
            raise PDEError("Dirichlet test functions must vanish on V_0")
        lapF = laplacian(g, Ft)
        inner = np.dot(rho[3:], np.asarray(dF(t))[3:] + lapF[3:]) + np.dot(P.polyval(rho[3:], coef), Ft[3:])
        bnd = -kappa * np.sum(rho[:3] * normal_derivatives(g, Ft) + r * (rho[:3] - rho_B) * Ft[:3])
        if traj.bc.kind == "dirichlet":
            bnd = -kappa * np.sum(rho_B * normal_derivatives(g, Ft))
        integrand.append(inner / nV + bnd)
        vals_now.append(np.dot(rho[3:], Ft[3:]) / nV)
    integrand = np.array(integrand)
    vals_now = np.array(vals_now)
    dt = np.diff(traj.times)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * dt * (integrand[1:] + integrand[:-1]))])
    return vals_now - vals_now[0] - cum


def pairing(traj: Trajectory, f: np.ndarray, k: int) -> float:
    """⟨f, ρ_t⟩ with respect to m_M (uniform site average)."""
    return float(np.mean(traj.values[k] * f))


def compare_levels(a: Trajectory, b: Trajectory, times: Sequence[float] | None = None) -> np.ndarray:
    """Sup-norm difference on the common sites V_M at shared times."""
    if a.level > b.level:
        a, b = b, a
    if a.bc != b.bc:
        raise PDEError("trajectories use different boundary data")
    if times is None:
        times = [t for t in a.times if np.any(np.isclose(b.times, t, rtol=0, atol=1e-12))]
    m = n_sites(a.level)
    return np.array([np.max(np.abs(a.at(t)[:m] - b.at(t)[:m])) for t in times])


def uniform_solution(phi: ReactionFn, rho0: float, T: float, n: int = 200000) -> float:
    """Reference scalar ODE ρ' = Φ(ρ) by fine RK4 (used only for nonlinear sanity checks)."""
    h = T / n
    y = rho0
    f = phi.poly
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(y)
