"""System model: users, network, learning constants, rate and delay formulas.

Units are SI throughout (W, Hz, bits, s, cycles). dB/dBm only appear in
``generate_scenario`` keyword arguments and the two conversion helpers.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping, Sequence

import numpy as np

from .numerics import DomainError

LN2 = math.log(2.0)


class ScenarioFormatError(ValueError):
    """Malformed scenario document. ``pointer`` is a JSON pointer to the field."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


# ---------------------------------------------------------------------------
# Unit helpers
# ---------------------------------------------------------------------------

def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def dbm_to_watts(x):
    return _out(10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0))


def db_to_linear(x):
    return _out(10.0 ** (np.asarray(x, dtype=float) / 10.0))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserProfile:
    cycles_per_sample: float  # C_k
    samples: int  # D_k
    f_max: float  # cycles/s
    p_max: float  # W
    gain: float  # linear power gain

    def __post_init__(self):
        for name in ("cycles_per_sample", "f_max", "p_max", "gain"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if int(self.samples) != self.samples or self.samples < 1:
            raise ValueError(f"samples must be an integer >= 1, got {self.samples}")


@dataclass(frozen=True)
class NetworkConfig:
    bandwidth: float  # B, Hz
    noise_psd: float  # N0, W/Hz
    upload_bits: float  # s, bits

    def __post_init__(self):
        for name in ("bandwidth", "noise_psd", "upload_bits"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")


@dataclass(frozen=True)
class LearningConfig:
    lipschitz: float = 1.0  # L
    strong_convexity: float = 1.0  # gamma
    xi: float = 0.1
    step: float = 0.1  # delta
    global_accuracy: float = 1e-3  # epsilon_0

    def __post_init__(self):
        L, g = self.lipschitz, self.strong_convexity
        if not (0 < g <= L and math.isfinite(L)):
            raise ValueError(f"need 0 < gamma <= L, got gamma={g}, L={L}")
        if not 0 < self.global_accuracy < 1:
            raise ValueError(f"global_accuracy must lie in (0, 1), got {self.global_accuracy}")
        if not (self.xi > 0 and self.step > 0):
            raise ValueError("xi and step must be > 0")
        if self.xi > g / L:
            warnings.warn(
                f"xi={self.xi} exceeds gamma/L={g / L:.4g}; the global-round bound does not apply",
                stacklevel=3,
            )
        if self.step >= 2.0 / L:
            warnings.warn(
                f"step={self.step} >= 2/L={2.0 / L:.4g}; local gradient steps may diverge",
                stacklevel=3,
            )

    @property
    def a(self) -> float:
        """Global-round coefficient: rounds needed = a / (1 - eta)."""
        L, g = self.lipschitz, self.strong_convexity
        return 2.0 * L * L / (g * g * self.xi) * math.log(1.0 / self.global_accuracy)

    @property
    def v(self) -> float:
        """Local-iteration coefficient: iterations = v * log2(1 / eta)."""
        L, d, g = self.lipschitz, self.step, self.strong_convexity
        denom = (2.0 - L * d) * d * g
        if denom <= 0:
            raise DomainError(f"step={d} >= 2/L={2.0 / L}: local iteration count undefined")
        return 2.0 / denom


@dataclass(frozen=True)
class DerivedConstants:
    a: float
    v: float
    workload: tuple[float, ...]  # A_k = v C_k D_k, cycles


def derive_constants(learn: LearningConfig, users: Sequence[UserProfile]) -> DerivedConstants:
    a, v = learn.a, learn.v
    return DerivedConstants(a, v, tuple(v * u.cycles_per_sample * u.samples for u in users))


@dataclass(frozen=True)
class Scenario:
    users: tuple[UserProfile, ...]
    net: NetworkConfig
    learn: LearningConfig
    seed: int | None = None
    derived: DerivedConstants = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        users = tuple(self.users)
        if not users:
            raise ValueError("a scenario needs at least one user")
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "derived", derive_constants(self.learn, users))

    @property
    def K(self) -> int:
        return len(self.users)

    # Column views used by the vectorised solver paths.
    @cached_property
    def workload(self) -> np.ndarray:
        return np.array(self.derived.workload)

    @cached_property
    def f_max(self) -> np.ndarray:
        return np.array([u.f_max for u in self.users])

    @cached_property
    def p_max(self) -> np.ndarray:
        return np.array([u.p_max for u in self.users])

    @cached_property
    def gain(self) -> np.ndarray:
        return np.array([u.gain for u in self.users])

    @cached_property
    def snr_bandwidth(self) -> np.ndarray:
        """g p_max / N0 in Hz; rate with bandwidth b is b log2(1 + this / b)."""
        return self.gain * self.p_max / self.net.noise_psd

    @cached_property
    def rate_ceiling(self) -> np.ndarray:
        """Supremum of the achievable rate over all bandwidths, bits/s."""
        return self.snr_bandwidth / LN2

    def replace(self, *, users=None, net=None, learn=None) -> "Scenario":
        return Scenario(
            users if users is not None else self.users,
            net if net is not None else self.net,
            learn if learn is not None else self.learn,
            self.seed,
        )

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "users": [
                {
                    "c_cycles_per_sample": u.cycles_per_sample,
                    "d_samples": u.samples,
                    "f_max_hz": u.f_max,
                    "p_max_w": u.p_max,
                    "gain_linear": u.gain,
                }
                for u in self.users
            ],
            "network": {
                "bandwidth_hz": self.net.bandwidth,
                "noise_psd_w_per_hz": self.net.noise_psd,
                "upload_bits": self.net.upload_bits,
            },
            "learning": {
                "lipschitz": self.learn.lipschitz,
                "gamma": self.learn.strong_convexity,
                "xi": self.learn.xi,
                "delta": self.learn.step,
                "epsilon0": self.learn.global_accuracy,
            },
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, doc: Any) -> "Scenario":
        if not isinstance(doc, Mapping):
            raise ScenarioFormatError("", "expected a JSON object")
        users_doc = _get(doc, "users", "", list)
        if not users_doc:
            raise ScenarioFormatError("/users", "at least one user is required")
        users = []
        for i, u in enumerate(users_doc):
            ptr = f"/users/{i}"
            if not isinstance(u, Mapping):
                raise ScenarioFormatError(ptr, "expected an object")
            cycles = _num(u, "c_cycles_per_sample", ptr)
            samples = _num(u, "d_samples", ptr)
            if samples != int(samples):
                raise ScenarioFormatError(f"{ptr}/d_samples", "must be an integer")
            users.append(
                _build(
                    ptr,
                    UserProfile,
                    cycles_per_sample=cycles,
                    samples=int(samples),
                    f_max=_num(u, "f_max_hz", ptr),
                    p_max=_num(u, "p_max_w", ptr),
                    gain=_num(u, "gain_linear", ptr),
                )
            )
        n = _get(doc, "network", "", Mapping)
        net = _build(
            "/network",
            NetworkConfig,
            bandwidth=_num(n, "bandwidth_hz", "/network"),
            noise_psd=_num(n, "noise_psd_w_per_hz", "/network"),
            upload_bits=_num(n, "upload_bits", "/network"),
        )
        lc = _get(doc, "learning", "", Mapping)
        learn = _build(
            "/learning",
            LearningConfig,
            lipschitz=_num(lc, "lipschitz", "/learning"),
            strong_convexity=_num(lc, "gamma", "/learning"),
            xi=_num(lc, "xi", "/learning"),
            step=_num(lc, "delta", "/learning"),
            global_accuracy=_num(lc, "epsilon0", "/learning"),
        )
        seed = doc.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
            raise ScenarioFormatError("/seed", "must be an integer or null")
        try:
            return cls(tuple(users), net, learn, seed)
        except DomainError as exc:
            raise ScenarioFormatError("/learning/delta", str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError("", f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)


def _get(doc, key, ptr, kind):
    if key not in doc:
        raise ScenarioFormatError(f"{ptr}/{key}", "missing")
    val = doc[key]
    if not isinstance(val, kind):
        raise ScenarioFormatError(f"{ptr}/{key}", f"expected {'an array' if kind is list else 'an object'}")
    return val


def _num(doc, key, ptr) -> float:
    if key not in doc:
        raise ScenarioFormatError(f"{ptr}/{key}", "missing")
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioFormatError(f"{ptr}/{key}", f"expected a number, got {val!r}")
    return float(val)


def _build(ptr, cls, **kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        msg = str(exc)
        # point at the offending field when the message names it
        for name, json_name in _FIELD_NAMES.get(cls, {}).items():
            if msg.startswith(name) or f" {name}" in msg:
                raise ScenarioFormatError(f"{ptr}/{json_name}", msg) from None
        raise ScenarioFormatError(ptr, msg) from None


_FIELD_NAMES = {
    UserProfile: {
        "cycles_per_sample": "c_cycles_per_sample",
        "samples": "d_samples",
        "f_max": "f_max_hz",
        "p_max": "p_max_w",
        "gain": "gain_linear",
    },
    NetworkConfig: {
        "bandwidth": "bandwidth_hz",
        "noise_psd": "noise_psd_w_per_hz",
        "upload_bits": "upload_bits",
    },
    LearningConfig: {
        "gamma": "gamma",
        "global_accuracy": "epsilon0",
        "xi": "xi",
        "step": "delta",
    },
}


# ---------------------------------------------------------------------------
# Physical formulas
# ---------------------------------------------------------------------------

def achievable_rate(b, p, g, n0):
    """Shannon rate ``b log2(1 + g p / (n0 b))`` in bits/s; zero bandwidth gives 0."""
    b = np.asarray(b, dtype=float)
    snr_bw = np.asarray(g, dtype=float) * np.asarray(p, dtype=float) / n0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = b * np.log1p(snr_bw / b) / LN2
    r = np.where(b > 0, r, 0.0)
    r = np.where(snr_bw > 0, r, 0.0)
    return _out(r)


def local_computation_time(workload, f, eta):
    """Seconds to run ``v log2(1/eta)`` local iterations: ``A log2(1/eta) / f``."""
    eta_arr = np.asarray(eta, dtype=float)
    if np.any(eta_arr <= 0) or np.any(eta_arr > 1):
        raise DomainError(f"local accuracy must lie in (0, 1], got {eta}")
    tau = np.asarray(workload, dtype=float) * -np.log2(eta_arr) / np.asarray(f, dtype=float)
    return _out(tau)


def user_delay(a, eta, tau, t):
    """Total training delay of one user: ``a / (1 - eta) * (tau + t)``."""
    eta_arr = np.asarray(eta, dtype=float)
    if np.any(eta_arr <= 0) or np.any(eta_arr >= 1):
        raise DomainError(f"local accuracy must lie in (0, 1), got {eta}")
    out = a / (1.0 - eta_arr) * (np.asarray(tau, dtype=float) + np.asarray(t, dtype=float))
    return _out(out)


def path_loss_db(distance_km, shadowing_db=0.0):
    """Urban macro path loss ``128.1 + 37.6 log10(d)`` plus shadowing, in dB."""
    return 128.1 + 37.6 * np.log10(distance_km) + shadowing_db


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------

DEFAULTS = {
    "area_side_m": 500.0,
    "min_distance_m": 1.0,
    "shadowing_std_db": 8.0,
    "noise_dbm_per_hz": -174.0,
    "c_range": (1e4, 3e4),
    "d_samples": 500,
    "p_max_dbm": 10.0,
    "f_max_hz": 2e9,
    "upload_bits": 28.1e3,
    "bandwidth_hz": 20e6,
    "lipschitz": 1.0,
    "gamma": 1.0,
    "xi": 0.1,
    "delta": 0.1,
    "epsilon0": 1e-3,
}


def generate_scenario(seed: int, K: int = 50, **overrides) -> Scenario:
    """Random cell of ``K`` users around a central BS, with the default setup.

    Users are dropped uniformly in a square, gains follow the path-loss model
    with log-normal shadowing, and ``C_k`` is uniform in ``c_range``. Any key
    of ``DEFAULTS`` can be overridden; the draw depends only on ``seed``.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    unknown = set(overrides) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown scenario parameters: {sorted(unknown)}")
    cfg = {**DEFAULTS, **overrides}

    rng = np.random.default_rng(seed)
    half = cfg["area_side_m"] / 2.0
    xy = rng.uniform(-half, half, size=(K, 2))
    dist_m = np.maximum(np.hypot(xy[:, 0], xy[:, 1]), cfg["min_distance_m"])
    shadow = rng.normal(0.0, cfg["shadowing_std_db"], size=K)
    gains = 10.0 ** (-path_loss_db(dist_m / 1000.0, shadow) / 10.0)
    c_lo, c_hi = cfg["c_range"]
    cycles = rng.uniform(c_lo, c_hi, size=K)

    p_max = dbm_to_watts(float(cfg["p_max_dbm"]))
    users = tuple(
        UserProfile(float(cycles[k]), int(cfg["d_samples"]), float(cfg["f_max_hz"]), p_max, float(gains[k]))
        for k in range(K)
    )
    net = NetworkConfig(
        float(cfg["bandwidth_hz"]),
        dbm_to_watts(float(cfg["noise_dbm_per_hz"])),
        float(cfg["upload_bits"]),
    )
    learn = LearningConfig(cfg["lipschitz"], cfg["gamma"], cfg["xi"], cfg["delta"], cfg["epsilon0"])
    return Scenario(users, net, learn, seed)
