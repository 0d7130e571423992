"""Backward differentiation formulae: exact rational coefficients, stability
angles, and the fully discrete time stepper

    (1/tau) sum_j delta_j u^{n-j} = A_h u^n + f^n,  n = k..N,

solved per step as (delta_0 M + tau K) U^n = tau M F^n - sum_{j>=1} delta_j M U^{n-j}.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np
from scipy.optimize import minimize_scalar

from .fem import AssembledPair, FEFunction

MAX_STEPS = 6  # BDF-k is zero-unstable beyond six steps

# A(alpha)-stability angles as fractions of pi, quoted to three decimals in
# the classical references (Hairer & Wanner, Section V.2).
REFERENCE_STABILITY_ANGLES = {1: 0.5, 2: 0.5, 3: 0.478, 4: 0.408, 5: 0.288, 6: 0.099}


@dataclass(frozen=True)
class BdfScheme:
    k: int
    delta: tuple[Fraction, ...]  # delta_0 .. delta_k, exact rationals
    alpha_k: float               # reference stability angle as a fraction of pi

    def delta_float(self) -> np.ndarray:
        return np.array([float(d) for d in self.delta])


def bdf_coefficients(k: int) -> BdfScheme:
    """Exact rational expansion of delta(zeta) = sum_{j=1}^k (1-zeta)^j / j."""
    if not 1 <= k <= MAX_STEPS:
        raise ValueError(f"BDF step count must be in 1..{MAX_STEPS}, got {k}")
    delta = [Fraction(0)] * (k + 1)
    for j in range(1, k + 1):
        for i in range(j + 1):
            delta[i] += Fraction((-1) ** i * comb(j, i), j)
    return BdfScheme(k=k, delta=tuple(delta), alpha_k=REFERENCE_STABILITY_ANGLES[k])


def stability_angle(k: int, samples: int = 200_001) -> float:
    """A(alpha)-stability angle: pi - sup |arg delta(zeta)| over |zeta| = 1.

    The sup over the closed disk sits on the boundary (arg delta is harmonic
    away from the single root zeta = 1, which is excluded by a small arc where
    arg delta(zeta) ~ arg(1 - zeta) stays below pi/2 in modulus).  Dense
    sampling is followed by golden-section refinement around the maximizer.
    Returns the angle in radians.
    """
    if samples < 10_000:
        raise ValueError(f"need at least 10^4 boundary samples, got {samples}")
    d = bdf_coefficients(k).delta_float()

    def neg_abs_arg(theta):
        zeta = np.exp(1j * np.asarray(theta))
        val = np.polynomial.polynomial.polyval(zeta, d)
        return -np.abs(np.angle(val))

    arc = 1e-8
    # |arg delta| is symmetric under conjugation; the upper half circle suffices
    thetas = np.linspace(arc, np.pi, samples)
    vals = neg_abs_arg(thetas)
    i = int(np.argmin(vals))
    lo = thetas[max(i - 1, 0)]
    hi = thetas[min(i + 1, samples - 1)]
    res = minimize_scalar(neg_abs_arg, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    sup_arg = max(-vals[i], -float(res.fun))
    return float(np.pi - sup_arg)


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    N: int
    k: int

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"step size must be positive, got {self.tau}")
        if self.N < self.k:
            raise ValueError(f"need N >= k, got N={self.N}, k={self.k}")

    def t(self, n: int) -> float:
        return n * self.tau

    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)


@dataclass
class Trajectory:
    grid: TimeGrid
    states: list  # FEFunction per n = 0..N

    def __post_init__(self):
        if len(self.states) != self.grid.N + 1:
            raise ValueError(f"expected {self.grid.N + 1} states, got {len(self.states)}")
        space = self.states[0].space
        if any(s.space is not space for s in self.states):
            raise ValueError("all trajectory states must share one FESpace")

    @property
    def space(self):
        return self.states[0].space

    def coeff_array(self) -> np.ndarray:
        return np.stack([s.coeffs for s in self.states])


def run_bdf(pair: AssembledPair, scheme: BdfScheme, grid: TimeGrid, forcing, starting) -> Trajectory:
    """March the k-step scheme from the k caller-supplied starting values.

    forcing(n, t) must return the FE coefficients of f_h^n as an FEFunction
    (or None for zero forcing); it is evaluated for n = k..N.
    """
    k = scheme.k
    if grid.k != k:
        raise ValueError(f"grid was built for k={grid.k}, scheme has k={k}")
    if len(starting) != k:
        raise ValueError(f"{k}-step scheme needs exactly {k} starting values, got {len(starting)}")
    space = pair.space
    for s in starting:
        if s.space is not space:
            raise ValueError("starting value lives on a different space")

    d = scheme.delta_float()
    tau = grid.tau
    solver = pair.stepping_solver(d[0], tau)
    M = pair.M

    states = [FEFunction(space, np.array(s.coeffs, dtype=float, copy=True)) for s in starting]
    mu_hist = [M @ s.coeffs for s in states]  # M U^{n-j} for the last k states

    for n in range(k, grid.N + 1):
        f_n = forcing(n, grid.t(n)) if forcing is not None else None
        rhs = np.zeros(space.n_dofs)
        if f_n is not None:
            if f_n.space is not space:
                raise ValueError(f"forcing at step {n} lives on a different space")
            rhs += tau * (M @ f_n.coeffs)
        for j in range(1, k + 1):
            rhs -= d[j] * mu_hist[-j]
        u_n = solver.solve(rhs)
        states.append(FEFunction(space, u_n))
        mu_hist.append(M @ u_n)
        if len(mu_hist) > k:
            mu_hist.pop(0)
    return Trajectory(grid=grid, states=states)


def d_tau(trajectory: Trajectory) -> list:
    """Backward difference quotients (u^n - u^{n-1})/tau for n = 1..N."""
    tau = trajectory.grid.tau
    s = trajectory.states
    return [FEFunction(s[0].space, (s[n].coeffs - s[n - 1].coeffs) / tau)
            for n in range(1, len(s))]


def dot_u(trajectory: Trajectory, scheme: BdfScheme) -> list:
    """BDF-weighted difference quotients (1/tau) sum_j delta_j u^{n-j}, n = k..N."""
    k = scheme.k
    d = scheme.delta_float()
    tau = trajectory.grid.tau
    s = trajectory.states
    out = []
    for n in range(k, len(s)):
        acc = d[0] * s[n].coeffs.copy()
        for j in range(1, k + 1):
            acc += d[j] * s[n - j].coeffs
        out.append(FEFunction(s[0].space, acc / tau))
    return out


def export_trajectory_csv(trajectory: Trajectory, path) -> None:
    """Write 'n,t,coeff_index,value' rows for every state and coefficient."""
    tau = trajectory.grid.tau
    with open(path, "w", encoding="utf-8") as f:
        f.write("n,t,coeff_index,value\n")
        for n, state in enumerate(trajectory.states):
            t = n * tau
            for i, v in enumerate(state.coeffs):
                f.write(f"{n},{t!r},{i},{v!r}\n")
