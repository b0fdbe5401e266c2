"""Adaptive rejection sampling for log-concave univariate densities.

Derivative-based variant: the upper hull is built from tangents at the
abscissae, the squeeze from chords between them. Every rejected
candidate that required a density evaluation is added to the hull.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ArsInitError, ConcavityError

HULL_TOL = 1e-8
MAX_POINTS = 50


@dataclass
class ArsTarget:
    """Log-concave target on the open interval ``(lower, upper)``.

    ``log_density_deriv2`` is optional and only used to place the initial
    abscissae; a finite difference of the first derivative is used
    otherwise.
    """

    log_density: Callable[[float], float]
    log_density_deriv: Callable[[float], float]
    lower: float = -math.inf
    upper: float = math.inf
    initial_abscissae: Optional[Sequence[float]] = None
    log_density_deriv2: Optional[Callable[[float], float]] = None
    start: Optional[float] = None


def _second_derivative(target, x):
    if target.log_density_deriv2 is not None:
        return target.log_density_deriv2(x)
    h = 1e-5 * max(abs(x), 1e-3)
    lo, hi = x - h, x + h
    if lo <= target.lower:
        lo = x
    if hi >= target.upper:
        hi = x
    return (target.log_density_deriv(hi) - target.log_density_deriv(lo)) / (hi - lo)


def _interior(target, x):
    return target.lower < x < target.upper


def find_mode(target, x0=None):
    """Locate the mode by bracketing the root of the derivative.

    Returns ``(mode, at_boundary)``; ``at_boundary`` is True when the
    density is monotone decreasing up to the lower end.
    """
    lo, hi = target.lower, target.upper
    dh = target.log_density_deriv
    positive = math.isfinite(lo) and lo >= 0
    if x0 is None or not _interior(target, x0):
        if positive:
            x0 = lo + 1.0 if not math.isfinite(hi) else 0.5 * (lo + hi)
        elif math.isfinite(lo) and math.isfinite(hi):
            x0 = 0.5 * (lo + hi)
        else:
            x0 = 0.0 if _interior(target, 0.0) else (lo + 1.0 if math.isfinite(lo) else hi - 1.0)
    g0 = dh(x0)
    if g0 == 0:
        return x0, False
    step = max(abs(x0), 1.0)
    a = b = x0
    for _ in range(200):
        if g0 > 0:
            nxt = b * 2.0 if positive else b + step
            if not nxt < hi:
                nxt = 0.5 * (b + hi)
            a, b = b, nxt
            if dh(b) <= 0:
                break
        else:
            nxt = (a - lo) * 0.5 + lo if positive else a - step
            if math.isfinite(lo) and not nxt > lo:
                nxt = 0.5 * (a + lo)
            a, b = nxt, a
            if dh(a) >= 0:
                break
            if positive and a - lo < 1e-10 * (x0 - lo):
                return lo, True
        step *= 2.0
    else:
        raise ArsInitError("could not bracket the mode of the target")
    fa, fb = dh(a), dh(b)
    if fa == 0:
        return a, False
    if fb == 0:
        return b, False
    return brentq(dh, a, b, xtol=1e-14, rtol=1e-12, maxiter=200), False


def default_abscissae(target):
    """Initial abscissae straddling the mode (see module docstring)."""
    mode, at_boundary = find_mode(target, target.start)
    lo, hi = target.lower, target.upper
    if at_boundary:
        x = lo + max(1e-12, 1e-6 * abs(lo))
        g = -target.log_density_deriv(x)
        width = 1.0 / g if g > 0 else 1.0
        pts = [lo + width * f for f in (0.1, 1.0, 3.0)]
    else:
        curv = _second_derivative(target, mode)
        sd = 1.0 / math.sqrt(-curv) if curv < 0 else max(abs(mode), 1.0)
        pts = [mode - sd, mode, mode + sd]
        if math.isfinite(lo) and lo >= 0:
            pts += [lo + 0.5 * (mode - lo), lo + 2.0 * (mode - lo)]
        else:
            pts += [mode - 3.0 * sd, mode + 3.0 * sd]
    pts = sorted({p for p in pts if _interior(target, p)})
    if len(pts) < 2:
        pts = sorted({p for p in (mode, 0.5 * (mode + lo) if math.isfinite(lo) else mode - 1.0,
                                  0.5 * (mode + hi) if math.isfinite(hi) else mode + 1.0)
                      if _interior(target, p)})
    return pts


class AdaptiveRejectionSampler:
    """Draws from an :class:`ArsTarget`; the hull adapts across draws."""

    def __init__(self, target: ArsTarget, max_points=MAX_POINTS, tol=HULL_TOL):
        self.target = target
        self.max_points = max_points
        self.tol = tol
        pts = target.initial_abscissae
        if pts is None:
            pts = default_abscissae(target)
        pts = np.unique(np.asarray(pts, dtype=float))
        if pts.size < 2:
            raise ArsInitError("need at least two distinct initial abscissae")
        if np.any(pts <= target.lower) or np.any(pts >= target.upper):
            raise ArsInitError("initial abscissae must lie inside the domain")
        self.x = pts
        self.h = np.array([target.log_density(v) for v in pts])
        self.dh = np.array([target.log_density_deriv(v) for v in pts])
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.dh))):
            raise ArsInitError("target is not finite at the initial abscissae")
        self._extend_tails()
        self._check_slopes(None)
        self._rebuild()

    def _extend_tails(self):
        t = self.target
        for _ in range(60):
            if math.isinf(t.upper) and not self.dh[-1] < 0:
                width = max(self.x[-1] - self.x[0], abs(self.x[-1]), 1.0)
                self._insert(self.x[-1] + width, check=False)
            elif math.isinf(t.lower) and not self.dh[0] > 0:
                width = max(self.x[-1] - self.x[0], abs(self.x[0]), 1.0)
                self._insert(self.x[0] - width, check=False)
            else:
                return
        raise ArsInitError("derivative does not change sign across the abscissae")

    def _check_slopes(self, xnew):
        slack = self.tol * (1.0 + np.abs(self.dh[:-1]) + np.abs(self.dh[1:]))
        bad = np.nonzero(np.diff(self.dh) > slack)[0]
        if bad.size:
            where = xnew if xnew is not None else float(self.x[bad[0] + 1])
            raise ConcavityError(
                f"log density is not concave near x={where!r}", abscissa=where)

    def _rebuild(self):
        x, h, dh = self.x, self.h, self.dh
        k = x.size
        z = np.empty(k + 1)
        z[0], z[-1] = self.target.lower, self.target.upper
        den = dh[:-1] - dh[1:]
        num = h[1:] - h[:-1] - x[1:] * dh[1:] + x[:-1] * dh[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            zi = np.where(np.abs(den) > 1e-300, num / den, 0.5 * (x[:-1] + x[1:]))
        bad = ~np.isfinite(zi)
        zi[bad] = 0.5 * (x[:-1] + x[1:])[bad]
        z[1:-1] = np.clip(zi, x[:-1], x[1:])
        self.z = z
        self.hmax = float(np.max(h))
        logm = np.empty(k)
        for j in range(k):
            logm[j] = self._segment_logmass(j)
        if not np.all(np.isfinite(logm) | (logm == -np.inf)) or np.any(logm == np.inf):
            raise ArsInitError("upper hull has infinite mass; domain needs bounding slopes")
        top = np.max(logm)
        w = np.exp(logm - top)
        self.cum = np.cumsum(w)
        self.cum /= self.cum[-1]

    def _segment_logmass(self, j):
        a, b = self.z[j], self.z[j + 1]
        g = self.dh[j]
        base = self.h[j] - self.hmax
        width = b - a
        if width <= 0:
            return -np.inf
        if g == 0:
            return base + math.log(width) if math.isfinite(width) else np.inf
        if g > 0:
            if not math.isfinite(b):
                return np.inf
            return base + g * (b - self.x[j]) + math.log(-math.expm1(-g * width)) - math.log(g)
        if not math.isfinite(a):
            return np.inf
        return base + g * (a - self.x[j]) + math.log(-math.expm1(g * width)) - math.log(-g)

    def _upper(self, xv, j):
        return self.h[j] + self.dh[j] * (xv - self.x[j])

    def _lower(self, xv):
        x = self.x
        if xv < x[0] or xv > x[-1]:
            return -np.inf
        i = min(int(np.searchsorted(x, xv, side="right")) - 1, x.size - 2)
        w = (xv - x[i]) / (x[i + 1] - x[i])
        return (1.0 - w) * self.h[i] + w * self.h[i + 1]

    def _sample_segment(self, j, u):
        a, b = self.z[j], self.z[j + 1]
        g = self.dh[j]
        if g == 0:
            return a + u * (b - a)
        width = b - a
        if g < 0:
            return a + math.log1p(-u * -math.expm1(g * width)) / g
        return b + math.log(u + (1.0 - u) * math.exp(-g * width)) / g

    def _insert(self, xv, hv=None, dv=None, check=True):
        if hv is None:
            hv = self.target.log_density(xv)
            dv = self.target.log_density_deriv(xv)
        if not (math.isfinite(hv) and math.isfinite(dv)):
            if check:
                return
            raise ArsInitError(f"target not finite at {xv!r}")
        i = int(np.searchsorted(self.x, xv))
        if i < self.x.size and self.x[i] == xv:
            return
        self.x = np.insert(self.x, i, xv)
        self.h = np.insert(self.h, i, hv)
        self.dh = np.insert(self.dh, i, dv)
        if check:
            self._check_slopes(xv)
            self._rebuild()

    def draw(self, rng, size=None):
        """One draw (``size=None``) or an array of ``size`` iid draws."""
        if size is None:
            return self._draw_one(rng)
        return np.array([self._draw_one(rng) for _ in range(int(size))])

    def _draw_one(self, rng):
        target = self.target
        for _ in range(100000):
            j = int(np.searchsorted(self.cum, rng.random(), side="right"))
            j = min(j, self.x.size - 1)
            xv = self._sample_segment(j, rng.random())
            if not _interior(target, xv):
                continue
            up = self._upper(xv, j)
            logw = math.log(rng.random())
            if logw <= self._lower(xv) - up:
                return xv
            hv = target.log_density(xv)
            dv = target.log_density_deriv(xv)
            scale = self.tol * (1.0 + abs(up))
            if hv > up + scale:
                raise ConcavityError(
                    f"log density exceeds its upper hull at x={xv!r}", abscissa=xv)
            low = self._lower(xv)
            if math.isfinite(low) and hv < low - scale:
                raise ConcavityError(
                    f"log density falls below its squeeze at x={xv!r}", abscissa=xv)
            if self.x.size < self.max_points:
                self._insert(xv, hv, dv)
            if logw <= hv - up:
                return xv
        raise ArsInitError("adaptive rejection sampling failed to accept a draw")


def ars_draw(target: ArsTarget, rng, size=None):
    """Draw from ``target`` with a freshly built hull."""
    return AdaptiveRejectionSampler(target).draw(rng, size)
