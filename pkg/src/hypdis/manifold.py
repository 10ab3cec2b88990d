"""Poincare-ball arithmetic with a trainable curvature.

The ball of curvature ``-c`` is the open set ``{x : c |x|^2 < 1}``.  All
functions work row-wise on ``(..., d)`` arrays and accept either numpy
arrays or :class:`hypdis.autodiff.Tensor` objects (for ``x`` and ``c``).
Tangent vectors always live at the origin.

Every ball-valued result is passed through :func:`project` so that its norm
stays at most ``(1 - BALL_EPS) / sqrt(c)``.
"""
from __future__ import annotations

from collections import Counter

import numpy as np

from hypdis import autodiff as ad

BALL_EPS = 1e-5
MIN_NORM = 1e-15
ARTANH_LIMIT = 1.0 - 1e-7


class DomainError(ValueError):
    """A point lies outside the open ball for the given curvature."""


def _v(x):
    return x.value if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)


def _sqrt(c):
    return ad.sqrt(c) if isinstance(c, ad.Tensor) else np.sqrt(c)


def check_in_ball(x, c, name="x"):
    """Raise :class:`DomainError` unless every row satisfies ``c |x|^2 < 1``."""
    xv, cv = _v(x), _v(c)
    if np.any(cv <= 0):
        raise DomainError("curvature must be positive")
    sq = (xv * xv).sum(axis=-1, keepdims=True) * cv
    if not np.all(np.isfinite(xv)) or np.any(sq >= 1.0):
        raise DomainError(f"{name} is not inside the Poincare ball of curvature -{np.max(cv):g}")


def _validate(c, *points):
    # Tensors come out of projected ops already; only raw arrays are checked.
    for i, p in enumerate(points):
        if not isinstance(p, ad.Tensor):
            check_in_ball(p, c, name=f"argument {i}")


def conformal_factor(x, c):
    """``2 / (1 - c |x|^2)``."""
    return 2.0 / (1.0 - c * ad.dot(x, x))


def project(x, c, eps=BALL_EPS):
    """Radially shrink rows whose norm exceeds ``(1 - eps) / sqrt(c)``."""
    if not isinstance(x, ad.Tensor) and not np.all(np.isfinite(x)):
        raise ValueError("cannot project non-finite coordinates")
    n = ad.norm(x, floor=MIN_NORM)
    maxnorm = (1.0 - eps) / _sqrt(c)
    outside = _v(n) > _v(maxnorm)
    if not np.any(outside):
        return x
    return ad.where(outside, x / n * maxnorm, x)


def mobius_add(x, y, c, validate=True):
    if validate:
        _validate(c, x, y)
    xy = ad.dot(x, y)
    x2 = ad.dot(x, x)
    y2 = ad.dot(y, y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return project(num / ad.clamp_min(den, MIN_NORM), c)


def mobius_neg(x):
    return -x


def distance(x, y, c, validate=True):
    """Geodesic distance; returns shape ``(..., 1)``."""
    if validate:
        _validate(c, x, y)
    sc = _sqrt(c)
    diff = mobius_add(-x, y, c, validate=False)
    arg = ad.clamp(sc * ad.norm(diff), hi=ARTANH_LIMIT)
    return 2.0 / sc * ad.artanh(arg)


def expmap0(v, c):
    """Exponential map at the origin; the zero vector maps to the origin."""
    sc = _sqrt(c)
    n = ad.norm(v, floor=MIN_NORM)
    return project(ad.tanh(sc * n) * v / (sc * n), c)


def logmap0(y, c, validate=True):
    """Logarithmic map at the origin; the origin maps to the zero vector."""
    if validate:
        _validate(c, y)
    sc = _sqrt(c)
    n = ad.norm(y, floor=MIN_NORM)
    arg = ad.clamp(sc * n, hi=ARTANH_LIMIT)
    return ad.artanh(arg) * y / (sc * n)


def mobius_matvec(m, x, c, validate=True):
    """``exp0(M log0(x))`` applied to every row of ``x``; ``m`` is ``(d_out, d_in)``."""
    if np.shape(_v(m))[-1] != np.shape(_v(x))[-1]:
        raise ValueError(f"matrix with {np.shape(_v(m))[-1]} columns cannot act on dimension {np.shape(_v(x))[-1]}")
    return expmap0(ad.matmul(logmap0(x, c, validate=validate), ad.transpose(m)), c)


def tangent_aggregate(points, weights, c_in, c_out):
    """``exp0^{c_out}(sum_j w_j log0^{c_in}(p_j))`` for one output point."""
    points = points if isinstance(points, ad.Tensor) else np.asarray(points, dtype=np.float64)
    weights = weights if isinstance(weights, ad.Tensor) else np.asarray(weights, dtype=np.float64)
    if _v(points).shape[0] == 0:
        raise ValueError("tangent_aggregate needs at least one point")
    if _v(weights).shape[0] != _v(points).shape[0]:
        raise ValueError("points and weights differ in length")
    tangent = ad.matmul(weights, logmap0(points, c_in))
    return expmap0(tangent, c_out)


def aggregate(adj, x, c_in, c_out):
    """Matrix form of :func:`tangent_aggregate`: row ``i`` uses ``adj[i]`` as weights."""
    return expmap0(ad.matmul(adj, logmap0(x, c_in, validate=False)), c_out)


class PoincareBall:
    """Bundle of the ball kernels with call counters (used for code-path audits)."""

    name = "poincare"
    hyperbolic = True

    def __init__(self):
        self.calls = Counter()

    def expmap0(self, v, c):
        self.calls["expmap0"] += 1
        return expmap0(v, c)

    def logmap0(self, y, c):
        self.calls["logmap0"] += 1
        return logmap0(y, c, validate=False)

    def mobius_add(self, x, y, c):
        self.calls["mobius_add"] += 1
        return mobius_add(x, y, c, validate=False)

    def matvec(self, m, x, c):
        self.calls["matvec"] += 1
        return mobius_matvec(m, x, c, validate=False)

    def distance(self, x, y, c):
        self.calls["distance"] += 1
        return distance(x, y, c, validate=False)

    def project(self, x, c):
        self.calls["project"] += 1
        return project(x, c)


class Euclidean:
    """Flat stand-in with the same interface: maps are identities, addition is ``+``."""

    name = "euclidean"
    hyperbolic = False

    def __init__(self):
        self.calls = Counter()

    def expmap0(self, v, c):
        self.calls["expmap0"] += 1
        return v

    def logmap0(self, y, c):
        self.calls["logmap0"] += 1
        return y

    def mobius_add(self, x, y, c):
        self.calls["mobius_add"] += 1
        return x + y

    def matvec(self, m, x, c):
        self.calls["matvec"] += 1
        return ad.matmul(x, ad.transpose(m))

    def distance(self, x, y, c):
        self.calls["distance"] += 1
        return ad.norm(x - y)

    def project(self, x, c):
        self.calls["project"] += 1
        return x


def make_geometry(hyperbolic=True):
    return PoincareBall() if hyperbolic else Euclidean()
