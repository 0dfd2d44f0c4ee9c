"""Delay-optimal joint accuracy / time / bandwidth allocation, plus baselines.

For a candidate total delay ``T`` every user should run its CPU flat out,
transmit at full power, and use all of the per-round time budget left after
local computation for uploading. What remains is a one-dimensional convex
problem in the local accuracy ``eta``: the minimum total bandwidth needed to
finish in time. ``T`` is feasible iff that minimum fits in ``B``, and
feasibility is monotone in ``T``, so the optimal delay is found by bisection
on ``T``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .model import LN2, Scenario, achievable_rate, local_computation_time
from .numerics import (
    DEFAULT_THRESHOLD_RTOL,
    DomainError,
    Interval,
    lambert_w_m1_from_log,
    bisect_root,
    bisect_threshold,
    minimize_convex_1d,
)

ETA_TOL = 1e-8
DOMAIN_TOL = 1e-10


class CapacityError(ValueError):
    """Requested rate is at or above the infinite-bandwidth ceiling."""


class EmptyDomainError(ValueError):
    """No local accuracy leaves a positive, achievable upload budget."""


class InvariantError(RuntimeError):
    """An allocation violates one of its constraints."""


class Scheme(str, enum.Enum):
    PROPOSED = "proposed"
    EB_FDMA = "eb-fdma"
    FE_FDMA = "fe-fdma"
    TDMA = "tdma"


# ---------------------------------------------------------------------------
# Per-user building blocks (all vectorised over users and/or eta)
# ---------------------------------------------------------------------------

def t_star(eta, T, a, workload, f_max):
    """Longest upload time that still meets ``T``: ``(1-eta)T/a + A log2(eta)/f``.

    Nonpositive values mean local computation alone overruns the budget.
    """
    eta = np.asarray(eta, dtype=float)
    out = (1.0 - eta) * T / a + np.asarray(workload) * np.log2(eta) / np.asarray(f_max)
    return float(out) if out.ndim == 0 else out


def required_rate(eta, T, a, workload, f_max, upload_bits):
    """Uplink rate needed to push ``upload_bits`` within ``t_star``."""
    t = np.asarray(t_star(eta, T, a, workload, f_max))
    if np.any(t <= 0):
        raise DomainError(f"no time left to upload at eta={eta}, T={T}")
    out = upload_bits / t
    return float(out) if out.ndim == 0 else out


def required_bandwidth(rate, g, p_max, n0):
    """Smallest bandwidth whose Shannon rate at full power equals ``rate``.

    Inverts ``b log2(1 + g p / (n0 b))`` through the lower Lambert-W branch:
    with ``m = ln2 n0 rate / (g p)``, ``b = -ln2 rate / (W_{-1}(-m e^{-m}) + m)``.

    Raises:
        CapacityError: when ``rate >= g p / (n0 ln2)``.
    """
    rate = np.asarray(rate, dtype=float)
    c = np.asarray(g, dtype=float) * np.asarray(p_max, dtype=float) / n0
    m = LN2 * rate / c
    if np.any(m >= 1.0) or np.any(~np.isfinite(m)):
        raise CapacityError(f"rate {rate} is not below the capacity ceiling {c / LN2}")
    if np.any(rate < 0):
        raise ValueError("rate must be nonnegative")
    out = _bandwidth_from_m(m, c)
    return float(out) if out.ndim == 0 else out


def _bandwidth_from_m(m, c):
    """Bandwidth for normalised rate ``m`` in [0, 1) and ``c = g p / n0``."""
    m = np.asarray(m, dtype=float)
    pos = m > 0
    safe = np.where(pos, m, 0.5)
    w = lambert_w_m1_from_log(np.log(safe) - safe)
    with np.errstate(divide="ignore"):
        b = -safe * c / (w + safe)
    return np.where(pos, b, 0.0)


def _rate_slope(b, c):
    """d/db of ``b log2(1 + c/b)``."""
    return np.log1p(c / b) / LN2 - c / ((b + c) * LN2)


def _need(eta, T, sc: Scenario) -> np.ndarray:
    """Per-user bandwidth needs at ``eta``; ``inf`` where unattainable.

    ``eta`` may be a scalar (result shape ``(K,)``) or 1-D (shape ``(n, K)``).
    """
    eta = np.asarray(eta, dtype=float)
    e = eta[..., None] if eta.ndim else eta
    a = sc.derived.a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (1.0 - e) * T / a + sc.workload * np.log2(e) / sc.f_max
        m = LN2 * sc.net.upload_bits / (t * sc.snr_bandwidth)
    ok = (t > 0) & (m < 1.0) & (e > 0) & (e < 1)
    b = _bandwidth_from_m(np.where(ok, m, 0.5), sc.snr_bandwidth)
    return np.where(ok, b, np.inf)


def total_required_bandwidth(eta, T, scenario: Scenario):
    """Sum of per-user bandwidth needs; ``inf`` marks an infeasible ``eta``."""
    tot = _need(eta, T, scenario).sum(axis=-1)
    return float(tot) if np.ndim(tot) == 0 else tot


def _total_slope(eta: float, T: float, sc: Scenario) -> float:
    """Derivative in eta of the total bandwidth need (finite inside the domain)."""
    a, s = sc.derived.a, sc.net.upload_bits
    t = (1.0 - eta) * T / a + sc.workload * math.log2(eta) / sc.f_max
    dt = -T / a + sc.workload / (sc.f_max * eta * LN2)
    rate = s / t
    drate = -s * dt / (t * t)
    b = _bandwidth_from_m(LN2 * rate / sc.snr_bandwidth, sc.snr_bandwidth)
    return float(np.sum(drate / _rate_slope(b, sc.snr_bandwidth)))


# ---------------------------------------------------------------------------
# Feasibility test for a fixed total delay
# ---------------------------------------------------------------------------

def eta_domain(T: float, scenario: Scenario) -> Interval | None:
    """Open range of eta where every user can still meet ``T`` at finite bandwidth.

    Each user's slack ``t_star - s / ceiling`` is concave in eta with its peak
    at ``a A / (T f ln2)``; the domain is the intersection of the per-user
    superlevel sets. Endpoints are returned on the feasible side, within
    ``DOMAIN_TOL`` of the true boundary. ``None`` when empty.
    """
    if not T > 0:
        return None
    sc = scenario
    a = sc.derived.a
    floor = sc.net.upload_bits / sc.rate_ceiling

    def slack(e):
        return (1.0 - e) * T / a + sc.workload * np.log2(e) / sc.f_max - floor

    peak = a * sc.workload / (T * sc.f_max * LN2)
    if np.any(peak >= 1.0):
        return None
    if np.any(slack(peak) <= 0):
        return None

    # [infeasible, feasible] brackets on each side of every user's peak
    lo_bad, lo_good = np.zeros_like(peak), peak.copy()
    hi_good, hi_bad = peak.copy(), np.ones_like(peak)
    while np.max(lo_good - lo_bad) > DOMAIN_TOL:
        mid = 0.5 * (lo_bad + lo_good)
        with np.errstate(divide="ignore"):
            good = slack(mid) > 0
        lo_good = np.where(good, mid, lo_good)
        lo_bad = np.where(good, lo_bad, mid)
    while np.max(hi_bad - hi_good) > DOMAIN_TOL:
        mid = 0.5 * (hi_good + hi_bad)
        good = slack(mid) > 0
        hi_good = np.where(good, mid, hi_good)
        hi_bad = np.where(good, hi_bad, mid)

    lo, hi = float(lo_good.max()), float(hi_good.min())
    if not lo < hi:
        return None
    return Interval(lo, hi)


def solve_eta_star(T: float, scenario: Scenario, method: str = "golden", tol: float = ETA_TOL):
    """Local accuracy minimising the total bandwidth need at delay ``T``.

    ``method="golden"`` runs golden-section search on the convex objective;
    ``method="derivative"`` bisects on the sign of its derivative. Returns
    ``(eta_star, bandwidth)``.

    Raises:
        EmptyDomainError: when no eta is admissible at this ``T``.
    """
    dom = eta_domain(T, scenario)
    if dom is None:
        raise EmptyDomainError(f"no admissible local accuracy at T={T}")
    return _solve_on(dom, T, scenario, method, tol)


class _Fits(Exception):
    def __init__(self, eta, bw):
        self.eta, self.bw = eta, bw


def _solve_on(dom: Interval, T, sc, method, tol, budget=None):
    """Minimise the bandwidth need over ``dom``.

    With ``budget`` set, stops at the first probe whose need fits in it and
    returns that probe instead of the minimiser.
    """
    def objective(e):
        bw = total_required_bandwidth(e, T, sc)
        if budget is not None and bw <= budget:
            raise _Fits(e, bw)
        return bw

    try:
        if method == "golden":
            res = minimize_convex_1d(objective, dom, tol=tol)
            return res.x, res.fx
        if method == "derivative":
            lo_slope = _total_slope(dom.lo, T, sc)
            hi_slope = _total_slope(dom.hi, T, sc)
            if lo_slope >= 0:
                eta = dom.lo
            elif hi_slope <= 0:
                eta = dom.hi
            else:
                eta = bisect_root(lambda e: _total_slope(e, T, sc), dom, tol=tol)
            return eta, objective(eta)
    except _Fits as hit:
        return hit.eta, hit.bw
    raise ValueError(f"unknown inner method {method!r}")


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    eta_star: float
    required_bandwidth: float
    eta_domain: Interval | None


def check_feasible(T: float, scenario: Scenario, method: str = "golden", early_exit: bool = False) -> FeasibilityReport:
    """Whether delay ``T`` is attainable within the total bandwidth.

    ``early_exit`` returns as soon as some eta is found to fit; the verdict
    is unchanged but ``eta_star`` is then only a witness, not the minimiser.
    """
    dom = eta_domain(T, scenario)
    if dom is None:
        return FeasibilityReport(False, math.nan, math.inf, None)
    budget = scenario.net.bandwidth if early_exit else None
    eta, bw = _solve_on(dom, T, scenario, method, ETA_TOL, budget)
    return FeasibilityReport(bool(bw <= scenario.net.bandwidth), eta, bw, dom)


def t_upper_bound(scenario: Scenario) -> float:
    """Delay of the equal-bandwidth, eta = 1/2 allocation, doubled per user term.

    Always feasible, so it caps the bisection bracket.
    """
    sc = scenario
    a, K, B, s = sc.derived.a, sc.K, sc.net.bandwidth, sc.net.upload_bits
    comp = 2.0 * a * sc.workload / sc.f_max
    comm = 2.0 * a * K * s / (B * np.log2(1.0 + sc.snr_bandwidth * K / B))
    return float(np.max(comp + comm))


# ---------------------------------------------------------------------------
# Allocations
# ---------------------------------------------------------------------------

@dataclass
class Allocation:
    total_delay: float
    eta: float
    transmit_time: np.ndarray
    bandwidth: np.ndarray
    cpu: np.ndarray
    power: np.ndarray
    per_user_delay: np.ndarray
    scheme: Scheme
    meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "total_delay_s": self.total_delay,
            "eta": self.eta,
            "transmit_time_s": self.transmit_time.tolist(),
            "bandwidth_hz": self.bandwidth.tolist(),
            "cpu_hz": self.cpu.tolist(),
            "power_w": self.power.tolist(),
            "per_user_delay_s": self.per_user_delay.tolist(),
            "meta": self.meta,
        }

    def violations(self, scenario: Scenario) -> list[str]:
        """Constraint violations, as human-readable strings (empty when valid)."""
        sc = scenario
        out = []
        T = self.total_delay
        if not (math.isfinite(T) and T > 0):
            out.append(f"total delay {T} is not a positive number")
        if not 0 < self.eta < 1:
            out.append(f"eta={self.eta} outside (0, 1)")
        if self.scheme is not Scheme.TDMA and self.bandwidth.sum() > sc.net.bandwidth * (1 + 1e-9):
            out.append(f"bandwidth {self.bandwidth.sum()} exceeds B={sc.net.bandwidth}")
        if self.scheme is Scheme.TDMA and np.any(self.bandwidth > sc.net.bandwidth * (1 + 1e-9)):
            out.append("a TDMA slot uses more than B")
        if np.any(self.bandwidth < 0) or np.any(self.transmit_time < 0):
            out.append("negative bandwidth or transmit time")
        if np.any(self.per_user_delay > T * (1 + 1e-9)):
            out.append("a per-user delay exceeds the total delay")
        if np.any(self.cpu > sc.f_max * (1 + 1e-12)) or np.any(self.power > sc.p_max * (1 + 1e-12)):
            out.append("cpu or power above the user limit")
        rates = achievable_rate(self.bandwidth, self.power, sc.gain, sc.net.noise_psd)
        if np.any(self.transmit_time * rates < sc.net.upload_bits * (1 - 1e-9)):
            out.append("some user cannot upload its update within its transmit time")
        return out

    def validate(self, scenario: Scenario) -> "Allocation":
        bad = self.violations(scenario)
        if bad:
            raise InvariantError("; ".join(bad))
        return self


def _fdma_allocation(sc: Scenario, eta: float, t: np.ndarray, b: np.ndarray, scheme, meta) -> Allocation:
    a = sc.derived.a
    tau = local_computation_time(sc.workload, sc.f_max, eta)
    per_user = a / (1.0 - eta) * (tau + t)
    return Allocation(
        total_delay=float(per_user.max()),
        eta=float(eta),
        transmit_time=np.asarray(t, dtype=float),
        bandwidth=np.asarray(b, dtype=float),
        cpu=sc.f_max.copy(),
        power=sc.p_max.copy(),
        per_user_delay=per_user,
        scheme=scheme,
        meta=meta,
    )


def _bisect_delay(sc: Scenario, feasible, rel_tol: float):
    hi = t_upper_bound(sc)
    for _ in range(4):
        if feasible(hi):
            break
        hi *= 1.0 + 1e-6
    return bisect_threshold(feasible, (0.0, hi), rel_tol=rel_tol, full_output=True)


def minimize_delay(
    scenario: Scenario,
    rel_tol: float = DEFAULT_THRESHOLD_RTOL,
    method: str = "golden",
) -> Allocation:
    """Minimum training delay and the allocation that achieves it.

    Bisects ``T`` on ``(0, t_upper_bound]`` until the bracket's relative width
    is at most ``rel_tol``; the returned delay is the feasible upper end.
    """
    sc = scenario
    T, info = _bisect_delay(sc, lambda T: check_feasible(T, sc, method, early_exit=True).feasible, rel_tol)
    rep = check_feasible(T, sc, method)
    eta = rep.eta_star
    t = t_star(eta, T, sc.derived.a, sc.workload, sc.f_max)
    b = _need(eta, T, sc)
    meta = {
        "outer_iterations": info.iterations,
        "bracket": [info.lo, info.hi],
        "bracket_rel_width": info.rel_width,
        "eta_domain": [rep.eta_domain.lo, rep.eta_domain.hi],
        "inner_method": method,
        "required_bandwidth_hz": rep.required_bandwidth,
    }
    alloc = _fdma_allocation(sc, eta, t, b, Scheme.PROPOSED, meta)
    # T is the certified-feasible bracket end; per-user delays equal it up to rounding
    alloc.total_delay = float(T)
    return alloc


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def baseline_eb_fdma(scenario: Scenario) -> Allocation:
    """Equal bandwidth ``B/K`` per user; eta tuned for the slowest user."""
    sc = scenario
    a, B, K = sc.derived.a, sc.net.bandwidth, sc.K
    b = np.full(K, B / K)
    t = sc.net.upload_bits / achievable_rate(b, sc.p_max, sc.gain, sc.net.noise_psd)

    def delay(eta):
        return float(np.max(a / (1.0 - eta) * (sc.workload * -math.log2(eta) / sc.f_max + t)))

    res = minimize_convex_1d(delay, (0.0, 1.0), tol=1e-10)
    return _fdma_allocation(sc, res.x, t, b, Scheme.EB_FDMA, {"eta_search": "golden"})


def baseline_fe_fdma(scenario: Scenario, rel_tol: float = DEFAULT_THRESHOLD_RTOL) -> Allocation:
    """Local accuracy pinned to 1/2; delay and bandwidth split optimised."""
    sc = scenario
    eta = 0.5
    B = sc.net.bandwidth
    T, info = _bisect_delay(sc, lambda T: total_required_bandwidth(eta, T, sc) <= B, rel_tol)
    t = t_star(eta, T, sc.derived.a, sc.workload, sc.f_max)
    b = _need(eta, T, sc)
    meta = {
        "outer_iterations": info.iterations,
        "bracket": [info.lo, info.hi],
        "bracket_rel_width": info.rel_width,
    }
    alloc = _fdma_allocation(sc, eta, t, b, Scheme.FE_FDMA, meta)
    alloc.total_delay = float(T)
    return alloc


def baseline_tdma(scenario: Scenario) -> Allocation:
    """Approximate TDMA reference: sequential uploads, each over the full band.

    A round lasts the slowest local computation plus the sum of all upload
    slots. User ``k``'s delay counts the slots up to and including its own.
    """
    sc = scenario
    a, B = sc.derived.a, sc.net.bandwidth
    t = sc.net.upload_bits / achievable_rate(B, sc.p_max, sc.gain, sc.net.noise_psd)
    t = np.asarray(t, dtype=float)
    slots = float(t.sum())

    def delay(eta):
        return a / (1.0 - eta) * (float(np.max(sc.workload * -math.log2(eta) / sc.f_max)) + slots)

    res = minimize_convex_1d(delay, (0.0, 1.0), tol=1e-10)
    eta = res.x
    tau_max = float(np.max(local_computation_time(sc.workload, sc.f_max, eta)))
    per_user = a / (1.0 - eta) * (tau_max + np.cumsum(t))
    return Allocation(
        total_delay=float(per_user.max()),
        eta=float(eta),
        transmit_time=t,
        bandwidth=np.full(sc.K, B),
        cpu=sc.f_max.copy(),
        power=sc.p_max.copy(),
        per_user_delay=per_user,
        scheme=Scheme.TDMA,
        meta={"approximate_baseline": True, "eta_search": "golden"},
    )


SOLVERS = {
    Scheme.PROPOSED: minimize_delay,
    Scheme.EB_FDMA: baseline_eb_fdma,
    Scheme.FE_FDMA: baseline_fe_fdma,
    Scheme.TDMA: baseline_tdma,
}


def solve(scenario: Scenario, scheme: Scheme | str = Scheme.PROPOSED) -> Allocation:
    return SOLVERS[Scheme(scheme)](scenario)
