"""Spatial norms (L^q, W^{1,q}, lifted W^{-1,q}) and discrete-in-time l^p norms.

Spatial norms are quadrature evaluations using the space's rule; q = inf takes
the max over quadrature points and Lagrange nodes.  The negative norm is
computed through the discrete elliptic lift K Z = M F and measured in W^{1,q},
which is how the estimates under test consume it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fem import AssembledPair, FEFunction, NodalField

Field = FEFunction | NodalField


@dataclass(frozen=True)
class NormSpec:
    """A space-time norm l^p(X): temporal exponent p over spatial norms X."""

    p: float
    q: float
    spatial_kind: str = "Lq"  # Lq | W1q | Wm1q

    def __post_init__(self):
        if not 1 < self.p <= math.inf:
            raise ValueError(f"temporal exponent p must be in (1, inf], got {self.p}")
        if not 1 <= self.q <= math.inf:
            raise ValueError(f"spatial exponent q must be in [1, inf], got {self.q}")
        if self.spatial_kind not in ("Lq", "W1q", "Wm1q"):
            raise ValueError(f"unknown spatial_kind {self.spatial_kind!r}")
        if self.spatial_kind == "Wm1q" and not 1 < self.q < math.inf:
            raise ValueError("the lifted negative norm needs 1 < q < inf")


def _quad_values(u: Field):
    E, Gx, Gy, w, _ = u.space.eval_matrices()
    full = u.full_values()
    return E @ full, w

def _quad_gradient(u: Field):
    E, Gx, Gy, w, _ = u.space.eval_matrices()
    full = u.full_values()
    return Gx @ full, Gy @ full, w


def lq_norm(u: Field, q: float) -> float:
    """(int |u|^q)^(1/q) by quadrature; sup over quad and nodal points for q=inf."""
    if not 1 <= q <= math.inf:
        raise ValueError(f"q must be in [1, inf], got {q}")
    vals, w = _quad_values(u)
    if q == math.inf:
        nodal = np.abs(u.full_values()).max() if u.space.n_nodes else 0.0
        return float(max(np.abs(vals).max(initial=0.0), nodal))
    return float(np.sum(w * np.abs(vals) ** q) ** (1.0 / q))


def _grad_magnitude(u: Field):
    gx, gy, w = _quad_gradient(u)
    return np.sqrt(np.abs(gx) ** 2 + np.abs(gy) ** 2), w


def w1q_norm(u: Field, q: float) -> float:
    """(||u||_q^q + ||grad u||_q^q)^(1/q); max form for q = inf."""
    if not 1 <= q <= math.inf:
        raise ValueError(f"q must be in [1, inf], got {q}")
    g, w = _grad_magnitude(u)
    if q == math.inf:
        return float(max(lq_norm(u, q), g.max(initial=0.0)))
    return float((lq_norm(u, q) ** q + np.sum(w * g**q)) ** (1.0 / q))


def w1q_sum(u: Field, q: float) -> float:
    """||u||_q + ||grad u||_q, the additive W^{1,q} form used by neg_norm."""
    g, w = _grad_magnitude(u)
    if q == math.inf:
        return float(lq_norm(u, q) + g.max(initial=0.0))
    return float(lq_norm(u, q) + np.sum(w * g**q) ** (1.0 / q))


def neg_norm(pair: AssembledPair, f: FEFunction, q: float) -> float:
    """Lifted W^{-1,q} surrogate: solve K Z = M F and return ||z||_q + ||grad z||_q."""
    if not 1 < q < math.inf:
        raise ValueError(f"the lifted negative norm needs 1 < q < inf, got {q}")
    if f.space is not pair.space:
        raise ValueError("FEFunction does not live on the pair's space")
    z = FEFunction(pair.space, pair.solve_K(pair.M @ f.coeffs))
    return w1q_sum(z, q)


def lp_time_norm(values, p: float, tau: float) -> float:
    """(tau * sum v_n^p)^(1/p) over per-step spatial norms; max for p = inf."""
    if not 1 <= p <= math.inf:
        raise ValueError(f"p must be in [1, inf], got {p}")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    if p == math.inf:
        return float(values.max())
    return float((tau * np.sum(values**p)) ** (1.0 / p))


def spatial_norm(u: Field, spec_or_q, kind: str = "Lq", pair: AssembledPair | None = None) -> float:
    """Dispatch on spatial kind; Wm1q needs the assembled pair for the lift."""
    if isinstance(spec_or_q, NormSpec):
        q, kind = spec_or_q.q, spec_or_q.spatial_kind
    else:
        q = spec_or_q
    if kind == "Lq":
        return lq_norm(u, q)
    if kind == "W1q":
        return w1q_norm(u, q)
    if kind == "Wm1q":
        if pair is None:
            raise ValueError("Wm1q norms need the assembled pair")
        return neg_norm(pair, u, q)
    raise ValueError(f"unknown spatial kind {kind!r}")
