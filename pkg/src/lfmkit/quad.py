"""Gaussian expectation engine built on the third-degree spherical cubature rule.

Every moment computation in the filtering stack (prediction ODEs, measurement
updates, cross covariances) funnels through this module, so sigma-point
generation, covariance square roots and summation order are consistent
everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

__all__ = [
    "CubatureRule",
    "PosdefError",
    "chol_psd",
    "cubature_points",
    "gauss_cross_cov",
    "gauss_expect",
    "sigma_points",
    "sym_sum",
]

# Jitter ladder for covariance square roots, relative to trace(P)/n.
# Covariances lose definiteness during long moment-ODE integrations, so the
# lowest rungs are hit routinely and are harmless.
_JITTER_REL_FIRST = 1e-12
_JITTER_REL_LAST = 1e-6


class PosdefError(ValueError):
    """Covariance square root failed even after jitter escalation."""


@dataclass(frozen=True)
class CubatureRule:
    """Unit-Gaussian point set: E[g(xi)] ~= sum_i weights[i] g(points[i])."""

    unit_points: np.ndarray  # (n_points, dim)
    weights: np.ndarray      # (n_points,)

    @property
    def dim(self) -> int:
        return self.unit_points.shape[1]

    @property
    def n_points(self) -> int:
        return self.unit_points.shape[0]


@lru_cache(maxsize=None)
def cubature_points(n: int) -> CubatureRule:
    """Third-degree spherical rule: 2n points at +-sqrt(n)*e_i, equal weights 1/(2n)."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    eye = np.eye(n)
    pts = np.sqrt(float(n)) * np.vstack([eye, -eye])
    wts = np.full(2 * n, 1.0 / (2 * n))
    pts.setflags(write=False)
    wts.setflags(write=False)
    return CubatureRule(pts, wts)


def _reduce(v: np.ndarray) -> np.ndarray:
    k = v.shape[0]
    if k == 1:
        return v[0]
    if k == 2:
        return v[0] + v[1]
    if k % 2:
        h = k // 2
        rest = np.concatenate([v[:h], v[h + 1:]], axis=0)
        return _reduce(rest) + v[h]
    h = k // 2
    return _reduce(v[:h]) + _reduce(v[h:])


def sym_sum(values: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted sum over axis 0 with a reversal-symmetric pairwise tree.

    A plain left-to-right accumulation makes the result depend on point order;
    this tree gives bit-identical sums when the order is reversed, which pins
    down the negation symmetry of the cubature rule exactly.
    """
    v = np.asarray(values, dtype=float)
    if weights is not None:
        w = np.asarray(weights, dtype=float).reshape((-1,) + (1,) * (v.ndim - 1))
        v = v * w
    return _reduce(v)


def chol_psd(P: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a nominally PSD matrix, with escalating jitter.

    Jitter starts at 1e-12 * trace(P)/n and is multiplied by 10 until
    1e-6 * trace(P)/n, after which :class:`PosdefError` is raised.  An exactly
    zero matrix factors to zero (a deterministic state is legitimate).
    """
    P = np.asarray(P, dtype=float)
    if not np.all(np.isfinite(P)):
        raise PosdefError("covariance contains non-finite entries")
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    n = P.shape[0]
    scale = float(np.trace(P)) / n
    if scale <= 0.0:
        if not P.any():
            return np.zeros_like(P)
        raise PosdefError("covariance has non-positive trace")
    eye = np.eye(n)
    jitter = _JITTER_REL_FIRST * scale
    limit = _JITTER_REL_LAST * scale
    while jitter <= limit * (1.0 + 1e-9):
        try:
            return np.linalg.cholesky(P + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise PosdefError(
        f"covariance not positive definite after jitter escalation to {limit:.3e}"
    )


def sigma_points(m: np.ndarray, P: np.ndarray, rule: CubatureRule | None = None) -> np.ndarray:
    """Sigma points m + chol(P) xi_i, stacked as rows (n_points, dim)."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if rule is None:
        rule = cubature_points(m.shape[0])
    L = chol_psd(P)
    return m + rule.unit_points @ L.T


def gauss_expect(
    f: Callable[[np.ndarray], np.ndarray],
    m: np.ndarray,
    P: np.ndarray,
    rule: CubatureRule | None = None,
) -> np.ndarray:
    """E[f(x)] for x ~ N(m, P).

    ``f`` must accept a stacked (n_points, dim) array and return one output row
    per point.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if rule is None:
        rule = cubature_points(m.shape[0])
    X = sigma_points(m, P, rule)
    fX = np.asarray(f(X), dtype=float)
    return sym_sum(fX, rule.weights)


def gauss_cross_cov(
    f: Callable[[np.ndarray], np.ndarray],
    g: Callable[[np.ndarray], np.ndarray],
    m: np.ndarray,
    P: np.ndarray,
    rule: CubatureRule | None = None,
) -> np.ndarray:
    """E[(f(x) - E f)(g(x) - E g)^T] for x ~ N(m, P), same sigma points as gauss_expect."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if rule is None:
        rule = cubature_points(m.shape[0])
    X = sigma_points(m, P, rule)
    fX = np.asarray(f(X), dtype=float)
    gX = np.asarray(g(X), dtype=float)
    if fX.ndim == 1:
        fX = fX[:, None]
    if gX.ndim == 1:
        gX = gX[:, None]
    ef = sym_sum(fX, rule.weights)
    eg = sym_sum(gX, rule.weights)
    dev_f = fX - ef
    dev_g = gX - eg
    return sym_sum(dev_f[:, :, None] * dev_g[:, None, :], rule.weights)
