"""Adaptive quadrature wrappers and Cauchy principal values.

Every routine raises :class:`QuadratureFailure` instead of silently
returning a QUADPACK result flagged with a nonzero ``ier``.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate

from .errors import DomainError, QuadratureFailure

EPSABS = 1e-14


def quad(func, a, b, epsrel=1e-9, epsabs=EPSABS, limit=400, points=None, **kw):
    """``scipy.integrate.quad`` that raises on any QUADPACK warning."""
    if a == b:
        return 0.0
    if points is not None:
        inside = sorted(x for x in points if a < x < b)
        if inside:
            # integrate piecewise: each piece meets epsrel on its own scale, which
            # survives cancellation between pieces (and quad refuses breakpoints
            # on infinite ranges anyway)
            edges = [a, *inside, b]
            return sum(
                quad(func, lo, hi, epsrel=epsrel, epsabs=epsabs, limit=limit, **kw)
                for lo, hi in zip(edges[:-1], edges[1:])
            )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = integrate.quad(func, a, b, epsrel=epsrel, epsabs=epsabs, limit=limit, full_output=1, **kw)
    if len(out) == 4:
        raise QuadratureFailure(f"quad on [{a}, {b}] failed: {out[3].strip()[:160]}")
    val, err = out[0], out[1]
    if not np.isfinite(val):
        raise QuadratureFailure(f"quad on [{a}, {b}] returned {val}")
    return val


def quad_trig(func, lo, hi, s, kind, epsrel=1e-9, points=None):
    """Integral of ``func(w) * cos(w s)`` (kind='cos') or ``sin`` over [lo, hi].

    The range is split at 0 so semi-infinite pieces can use QUADPACK's
    Fourier-integral routine; negative pieces are mirrored onto w > 0.
    """
    if kind not in ("cos", "sin"):
        raise ValueError(kind)
    if s == 0:
        if kind == "sin":
            return 0.0
        return quad(func, lo, hi, epsrel=epsrel, points=points)
    total = 0.0
    sign = 1.0 if kind == "cos" else -1.0
    if hi > 0:
        total += _trig_positive(func, max(lo, 0.0), hi, s, kind, epsrel, points)
    if lo < 0:
        mirrored = [-x for x in points] if points else None
        total += sign * _trig_positive(lambda w: func(-w), max(-hi, 0.0), -lo, s, kind, epsrel, mirrored)
    return total


def _trig_positive(func, a, b, s, kind, epsrel, points):
    if a >= b:
        return 0.0
    if math.isinf(b):
        # QAWF rejects breakpoints; integrate the finite head separately.
        cut = max([a] + [x for x in (points or []) if x > a])
        head = _trig_positive(func, a, cut, s, kind, epsrel, points) if cut > a else 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            # QAWF returns DBL_MAX when epsabs is near machine precision
            out = integrate.quad(func, cut, np.inf, weight=kind, wvar=s, epsabs=1e-13, full_output=1, limlst=200)
        bad = not abs(out[0]) < 1e300 or (len(out) == 4 and out[1] > max(1e-8, epsrel * abs(out[0]) * 10))
        if bad:
            # small s: the oscillation is too slow for QAWF, plain quadrature copes
            trig = math.cos if kind == "cos" else math.sin
            return head + quad(lambda w: func(w) * trig(w * s), cut, np.inf, epsrel=epsrel)
        return head + out[0]
    edges = [a, *sorted(x for x in (points or []) if a < x < b), b]
    return sum(
        quad(func, lo, hi, epsrel=epsrel, weight=kind, wvar=s) for lo, hi in zip(edges[:-1], edges[1:])
    )


def principal_value(func, c, lo, hi, epsrel=1e-9, radius=None, points=None):
    """Cauchy principal value of ``func(x)/(x - c)`` over ``[lo, hi]``.

    A symmetric window of half-width ``radius`` around the pole is folded
    onto ``int_0^R (f(c+t) - f(c-t))/t dt``, which is the excision-radius
    limit taken analytically; the integrand is regular there.  Outside the
    window ordinary adaptive quadrature is used.
    """
    if not lo < c < hi:
        raise DomainError(f"pole {c} not interior to [{lo}, {hi}]")
    room = min(c - lo, hi - c)
    r = room if radius is None else min(radius, room)
    if math.isinf(r):
        r = max(1.0, abs(c))

    def folded(t):
        if t == 0.0:
            h = 1e-6 * max(r, 1e-300)
            return (func(c + h) - func(c - h)) / (2 * h)
        return (func(c + t) - func(c - t)) / t

    inner_pts = None
    if points:
        inner_pts = sorted({abs(x - c) for x in points if 0 < abs(x - c) < r})
    total = quad(folded, 0.0, r, epsrel=epsrel, points=inner_pts)
    if c - r > lo:
        total += quad(lambda x: func(x) / (x - c), lo, c - r, epsrel=epsrel, points=points)
    if c + r < hi:
        total += quad(lambda x: func(x) / (x - c), c + r, hi, epsrel=epsrel, points=points)
    return total


def excision_riemann_pv(func, c, lo, hi, delta, n=200001):
    """Brute-force PV: midpoint sums over ``[lo, c-delta] U [c+delta, hi]``.

    Independent of :func:`principal_value`; used as a test oracle with a
    shrinking excision radius.
    """
    total = 0.0
    for a, b in ((lo, c - delta), (c + delta, hi)):
        if b <= a:
            continue
        # geometric clustering toward the excision edge keeps the sum accurate
        u = (np.arange(n) + 0.5) / n
        if b == c - delta:
            x = b - (b - a) * u**2
            w = 2 * (b - a) * u / n
        else:
            x = a + (b - a) * u**2
            w = 2 * (b - a) * u / n
        total += float(np.sum(w * func(x) / (x - c)))
    return total
