"""Quadrature rules on the reference triangle {(x, y): x, y >= 0, x + y <= 1}.

Rules are collapsed (Duffy) tensor-Gauss rules: a Gauss-Legendre grid on the
unit square mapped by (u, v) -> (u, v*(1-u)) with Jacobian (1-u).  All weights
are positive at every exactness degree, which keeps assembled mass matrices
SPD and L^q norm evaluations monotone.
"""

from __future__ import annotations

import functools

import numpy as np


@functools.lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (points, weights) exact for polynomials of total degree <= degree.

    Points have shape (nq, 2), weights (nq,) and sum to 1/2 (reference area).
    """
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    # After the Duffy collapse the integrand picks up one extra power of u.
    n_u = (degree + 1) // 2 + 1
    n_v = degree // 2 + 1
    xu, wu = np.polynomial.legendre.leggauss(n_u)
    xv, wv = np.polynomial.legendre.leggauss(n_v)
    u = 0.5 * (xu + 1.0)
    v = 0.5 * (xv + 1.0)
    wu = 0.5 * wu
    wv = 0.5 * wv

    U, V = np.meshgrid(u, v, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = (WU * WV * (1.0 - U)).ravel()
    pts = np.column_stack([x, y])
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def rule_id(degree: int) -> str:
    """Identifier string recorded alongside assembled matrices and reports."""
    return f"duffy-gauss(degree={degree})"
