"""Scalar special functions and one-dimensional search primitives.

Everything here is a pure function. ``lambert_w_m1`` accepts scalars or numpy
arrays; the search routines work on scalar callables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

EXP_M1 = math.exp(-1.0)
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

DEFAULT_ROOT_TOL = 1e-12
DEFAULT_THRESHOLD_RTOL = 1e-6


class DomainError(ValueError):
    """Argument outside the domain of a formula."""


class BracketError(ValueError):
    """Search bracket does not enclose a sign change / threshold."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"interval endpoints must be finite, got ({self.lo}, {self.hi})")
        if not self.lo < self.hi:
            raise ValueError(f"interval needs lo < hi, got ({self.lo}, {self.hi})")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __contains__(self, x: float) -> bool:
        return self.lo <= x <= self.hi


def _as_interval(bracket) -> Interval:
    if isinstance(bracket, Interval):
        return bracket
    lo, hi = bracket
    return Interval(float(lo), float(hi))


# ---------------------------------------------------------------------------
# Lambert W, lower real branch
# ---------------------------------------------------------------------------

def lambert_w_m1_from_log(log_negx: np.ndarray) -> np.ndarray:
    """W_{-1}(x) given ``log(-x)``, for ``-1/e <= x < 0``.

    Works in log space, solving ``w + log(-w) = log(-x)`` with Halley steps,
    so arguments down to ``-exp(-700)`` and beyond never underflow.
    """
    lx = np.asarray(log_negx, dtype=float)
    # 1 + e*x, computed without cancellation; <= 0 means at/over the branch point
    t = -np.expm1(1.0 + lx)
    t = np.maximum(t, 0.0)

    near = t < 0.5
    # branch-point series in p = -sqrt(2(1 + e x))
    p = -np.sqrt(2.0 * t)
    w_series = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3 - 43.0 / 540.0 * p**4
    # asymptotic guess for x -> 0-
    with np.errstate(invalid="ignore", divide="ignore"):
        l1 = np.where(near, -2.0, lx)
        l2 = np.log(-l1)
        w_asym = l1 - l2 + l2 / l1
    w = np.where(near, w_series, np.minimum(w_asym, -1.0))

    active = t > 0.0
    for _ in range(30):
        if not active.any():
            break
        with np.errstate(invalid="ignore", divide="ignore"):
            g = w + np.log(-w) - lx
            g1 = 1.0 + 1.0 / w
            g2 = -1.0 / (w * w)
            step = g / g1 / (1.0 - g * g2 / (2.0 * g1 * g1))
        step = np.where(active & np.isfinite(step), step, 0.0)
        w_new = np.minimum(w - step, -1.0)
        done = np.abs(w_new - w) <= 4.0 * np.finfo(float).eps * np.abs(w_new)
        w = np.where(active, w_new, w)
        active &= ~done
    return np.where(t > 0.0, w, -1.0)


def lambert_w_m1(x):
    """Lower real branch W_{-1} of the Lambert W function.

    Returns ``w <= -1`` with ``w * exp(w) == x`` for ``x`` in ``[-1/e, 0)``.
    This is the branch needed to invert ``b * log2(1 + c / b)``; the principal
    branch returns the trivial root and makes that inversion singular.

    Raises:
        DomainError: if any ``x < -1/e`` or ``x >= 0``.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr >= 0.0) or np.any(arr < -EXP_M1):
        raise DomainError(f"lambert_w_m1 is defined on [-1/e, 0), got {x!r}")
    out = lambert_w_m1_from_log(np.log(-arr))
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Bracketing searches
# ---------------------------------------------------------------------------

def bisect_root(
    f: Callable[[float], float],
    bracket,
    tol: float = DEFAULT_ROOT_TOL,
    max_iter: int = 400,
) -> float:
    """Root of a monotone function by bisection, to absolute bracket width ``tol``."""
    iv = _as_interval(bracket)
    lo, hi = iv.lo, iv.hi
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise BracketError(f"f has the same sign at both ends of [{lo}, {hi}]: {flo}, {fhi}")
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


class ThresholdInfo(NamedTuple):
    iterations: int
    lo: float
    hi: float

    @property
    def rel_width(self) -> float:
        return (self.hi - self.lo) / self.hi if self.hi else 0.0


def bisect_threshold(
    feasible: Callable[[float], bool],
    bracket,
    rel_tol: float = DEFAULT_THRESHOLD_RTOL,
    max_iter: int = 200,
    full_output: bool = False,
):
    """Smallest value in ``bracket`` where a monotone predicate turns true.

    The predicate must be false below the threshold and true at and above it.
    Halves ``[lo, hi]`` until ``(hi - lo) / hi <= rel_tol`` and returns ``hi``,
    which is always a point where the predicate held.

    With ``full_output=True`` returns ``(x, ThresholdInfo)``.
    """
    iv = _as_interval(bracket)
    lo, hi = iv.lo, iv.hi
    if not feasible(hi):
        raise BracketError(f"predicate is false at the upper end {hi}")
    if feasible(lo):
        result = (lo, ThresholdInfo(0, lo, lo))
        return result if full_output else lo
    it = 0
    while it < max_iter and (hi - lo) > rel_tol * abs(hi):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
        it += 1
    return (hi, ThresholdInfo(it, lo, hi)) if full_output else hi


class LineMin(NamedTuple):
    x: float
    fx: float
    flat: bool = False


def minimize_convex_1d(
    f: Callable[[float], float],
    bracket,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> LineMin:
    """Golden-section minimisation of a convex (unimodal) function.

    Only interior points are evaluated, so ``f`` may blow up at the bracket
    ends. Returns ``LineMin(x, f(x), flat)``; when the three opening probes
    agree to rounding the function is treated as flat and the bracket
    midpoint is returned with ``flat=True``.
    """
    iv = _as_interval(bracket)
    a, b = iv.lo, iv.hi
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    fm = f(iv.mid)
    probes = (f1, fm, f2)
    if not all(math.isfinite(v) for v in probes):
        raise ValueError(f"non-finite objective inside [{a}, {b}]: {probes}")
    ref = max(abs(v) for v in probes)
    if max(probes) - min(probes) <= 1e-14 * max(ref, 1e-300):
        return LineMin(iv.mid, fm, True)

    for _ in range(max_iter):
        if b - a <= tol:
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_PHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (b - a)
            f2 = f(x2)
    if f1 <= f2:
        return LineMin(x1, f1, False)
    return LineMin(x2, f2, False)
