"""Independent oracles and the acceptance checks built on them.

The oracles avoid the solver's machinery on purpose: required bandwidth is
found by bisecting the Shannon rate (no Lambert W), the accuracy search is a
plain grid, and delay-optimal allocations come from exhaustive grids over
accuracy and bandwidth split. ``run_checks`` drives everything for the
``verify`` command and the acceptance tests.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fl_sim
from .model import LN2, LearningConfig, Scenario, achievable_rate, dbm_to_watts, generate_scenario
from .numerics import lambert_w_m1
from .optimizer import (
    baseline_eb_fdma,
    baseline_fe_fdma,
    baseline_tdma,
    check_feasible,
    eta_domain,
    minimize_delay,
    required_bandwidth,
    total_required_bandwidth,
)

# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def bandwidth_by_bisection(rate, c, iters: int = 200) -> np.ndarray:
    """Bandwidth whose rate ``b log2(1 + c/b)`` equals ``rate``; ``inf`` if unreachable."""
    rate = np.asarray(rate, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), rate.shape)
    reach = rate < c / LN2
    need = np.where(reach, rate, 0.0)

    def r(b):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return np.where(b > 0, b * np.log2(1.0 + c / b), 0.0)

    hi = np.maximum(need, 1e-300)
    for _ in range(2000):
        short = r(hi) < need
        if not short.any():
            break
        hi = np.where(short, hi * 2.0, hi)
    lo = np.zeros_like(hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = r(mid) >= need
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return np.where(reach, hi, np.inf)


def _raw_constants(sc: Scenario):
    """a and per-user workloads recomputed straight from the inputs."""
    lc = sc.learn
    a = 2 * lc.lipschitz**2 / (lc.strong_convexity**2 * lc.xi) * math.log(1 / lc.global_accuracy)
    v = 2 / ((2 - lc.lipschitz * lc.step) * lc.step * lc.strong_convexity)
    A = np.array([v * u.cycles_per_sample * u.samples for u in sc.users])
    f = np.array([u.f_max for u in sc.users])
    c = np.array([u.gain * u.p_max / sc.net.noise_psd for u in sc.users])
    return a, A, f, c


def grid_feasible(T: float, sc: Scenario, n_eta: int = 2000) -> bool:
    """Exhaustive check over an accuracy grid with per-user minimal bandwidths.

    For each grid accuracy every user gets the whole remaining round time for
    upload; the minimal bandwidth for each user is found by rate bisection and
    the point is feasible when those bandwidths fit in ``B``.
    """
    a, A, f, c = _raw_constants(sc)
    eta = np.concatenate([np.linspace(0.0, 1.0, n_eta + 2)[1:-1], np.logspace(-12, -3, 200)])
    t = (1 - eta[:, None]) * T / a - A * np.log2(1 / eta[:, None]) / f
    ok = np.all(t > 0, axis=1)
    if not ok.any():
        return False
    rate = sc.net.upload_bits / t[ok]
    b = bandwidth_by_bisection(rate, c, iters=80)
    return bool(np.any(b.sum(axis=1) <= sc.net.bandwidth))


def grid_min_delay(sc: Scenario, n_eta: int = 800, n_split: int = 800, refine: int = 2) -> float:
    """Best delay over a grid of (accuracy, bandwidth split) for two users.

    For a fixed accuracy and split, the delay is explicit: every user uploads
    at full power over its share. The grid is zoomed around the incumbent
    ``refine`` times.
    """
    if sc.K != 2:
        raise ValueError("the split grid is for two-user scenarios")
    a, A, f, c = _raw_constants(sc)
    B, s = sc.net.bandwidth, sc.net.upload_bits
    e_lo, e_hi, th_lo, th_hi = 0.0, 1.0, 0.0, 1.0
    best = math.inf
    for _ in range(refine + 1):
        eta = np.linspace(e_lo, e_hi, n_eta + 2)[1:-1]
        th = np.linspace(th_lo, th_hi, n_split + 2)[1:-1]
        b1, b2 = th * B, (1 - th) * B
        with np.errstate(divide="ignore"):
            t1 = s / (b1 * np.log2(1 + c[0] / b1))
            t2 = s / (b2 * np.log2(1 + c[1] / b2))
        comp = np.log2(1 / eta)[:, None]
        rounds = (a / (1 - eta))[:, None]
        T = rounds * np.maximum(A[0] / f[0] * comp + t1[None, :], A[1] / f[1] * comp + t2[None, :])
        i, j = np.unravel_index(np.argmin(T), T.shape)
        best = min(best, float(T[i, j]))
        de, dt = (e_hi - e_lo) / (n_eta + 1), (th_hi - th_lo) / (n_split + 1)
        e_lo, e_hi = max(eta[i] - 4 * de, 0.0), min(eta[i] + 4 * de, 1.0)
        th_lo, th_hi = max(th[j] - 4 * dt, 0.0), min(th[j] + 4 * dt, 1.0)
    return best


def finite_difference_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float
    limit_s: float | None = None

    @property
    def ok(self) -> bool:
        return self.passed and (self.limit_s is None or self.seconds <= self.limit_s)

    def line(self) -> str:
        budget = f" (limit {self.limit_s:g}s)" if self.limit_s else ""
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.detail} [{self.seconds:.2f}s{budget}]"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.ok,
            "detail": self.detail,
            "seconds": round(self.seconds, 3),
            "limit_s": self.limit_s,
        }


def _timed(name: str, limit_s: float | None, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0, limit_s)


def check_lambert_roundtrip(n: int = 100_000) -> CheckResult:
    def run():
        w = np.linspace(-50.0, -1.0, n)
        err = np.abs(lambert_w_m1(w * np.exp(w)) - w) / np.abs(w)
        worst = float(err.max())
        return worst <= 1e-10, f"max relative error {worst:.2e} over {n} points (tol 1e-10)"

    return _timed("lambert_w_roundtrip", 1.0, run)


def check_rate_inversion(n: int = 10_000, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        g = 10.0 ** rng.uniform(-16, -8, n)
        p = 10.0 ** rng.uniform(-4, 0, n)
        n0 = dbm_to_watts(-174.0)
        ceiling = g * p / (n0 * LN2)
        frac = 10.0 ** rng.uniform(-6, math.log10(0.999), n)
        r = frac * ceiling
        b = required_bandwidth(r, g, p, n0)
        back = achievable_rate(b, p, g, n0)
        worst = float(np.max(np.abs(back - r) / r))
        return worst <= 1e-9, f"max relative error {worst:.2e} over {n} samples, rate/ceiling in [1e-6, 0.999] (tol 1e-9)"

    return _timed("rate_inversion_roundtrip", 1.0, run)


def check_convexity(n_scenarios: int = 20, t_factors=(1.01, 1.1, 1.5, 2.0, 4.0), n_grid: int = 1000) -> CheckResult:
    def run():
        worst = math.inf
        cases = 0
        for seed in range(n_scenarios):
            sc = generate_scenario(1000 + seed)
            T0 = minimize_delay(sc, rel_tol=1e-3).total_delay
            for fac in t_factors:
                T = T0 * fac
                dom = eta_domain(T, sc)
                if dom is None or not check_feasible(T, sc).feasible:
                    return False, f"T={T} expected feasible (seed {1000 + seed})"
                eta = np.linspace(dom.lo, dom.hi, n_grid)
                f = total_required_bandwidth(eta, T, sc)
                d2 = f[2:] - 2 * f[1:-1] + f[:-2]
                scale = np.maximum.reduce([np.abs(f[2:]), np.abs(f[1:-1]), np.abs(f[:-2])])
                worst = min(worst, float(np.min(d2 / scale)))
                cases += 1
        return worst >= -1e-6, f"min scaled second difference {worst:.2e} over {cases} (scenario, T) grids (tol -1e-6)"

    return _timed("inner_objective_convexity", 30.0, run)


def _toy_k3(seed: int) -> Scenario:
    # narrow band so bandwidth, not computation, decides feasibility
    return generate_scenario(seed, K=3, bandwidth_hz=3e5)


def check_feasibility_oracle(n_scenarios: int = 10, n_rungs: int = 50) -> CheckResult:
    def run():
        mismatches, compared, skipped, feasible = [], 0, 0, 0
        for seed in range(n_scenarios):
            sc = _toy_k3(seed)
            T_star = minimize_delay(sc, rel_tol=1e-9).total_delay
            # ladder spans the empty-domain, bandwidth-limited and slack regimes
            for T in np.geomspace(T_star / 3, 3 * T_star, n_rungs):
                if abs(T / T_star - 1) <= 0.01:
                    skipped += 1
                    continue
                fast = check_feasible(float(T), sc).feasible
                slow = grid_feasible(float(T), sc)
                compared += 1
                feasible += slow
                if fast != slow:
                    mismatches.append((seed, float(T), fast, slow))
        detail = (
            f"{compared} rungs compared ({feasible} feasible), {skipped} within 1% of threshold skipped, "
            f"{len(mismatches)} mismatches"
        )
        if mismatches:
            detail += f" e.g. {mismatches[:3]}"
        return not mismatches, detail

    return _timed("feasibility_oracle_equivalence", 120.0, run)


def toy_k2(seed: int) -> Scenario:
    return generate_scenario(seed, K=2, bandwidth_hz=2e5)


def check_end_to_end(n_scenarios: int = 5) -> CheckResult:
    def run():
        worst, below = 0.0, 0.0
        for seed in range(n_scenarios):
            sc = toy_k2(seed)
            T = minimize_delay(sc).total_delay
            grid = grid_min_delay(sc)
            worst = max(worst, abs(T - grid) / grid)
            below = max(below, (T - grid) / grid)
        # the grid only visits feasible points, so it can never beat the optimum
        ok = worst <= 0.02 and below <= 1e-5
        return ok, f"max |T* - grid|/grid = {worst:.2e} (tol 2e-2); solver above grid by at most {below:.1e}"

    return _timed("end_to_end_grid_optimality", 60.0, run)


def check_dominance(n_scenarios: int = 100) -> CheckResult:
    def run():
        worst_eb, worst_fe, props, tdmas = -math.inf, -math.inf, [], []
        for seed in range(n_scenarios):
            sc = generate_scenario(seed)
            p = minimize_delay(sc).total_delay
            eb = baseline_eb_fdma(sc).total_delay
            fe = baseline_fe_fdma(sc).total_delay
            worst_eb = max(worst_eb, (p - eb) / eb)
            worst_fe = max(worst_fe, (p - fe) / fe)
            props.append(p)
            tdmas.append(baseline_tdma(sc).total_delay)
        mp, mt = float(np.mean(props)), float(np.mean(tdmas))
        ok = worst_eb <= 1e-6 and worst_fe <= 1e-6 and mp < mt
        return ok, (
            f"max (proposed-EB)/EB = {worst_eb:.2e}, max (proposed-FE)/FE = {worst_fe:.2e} (tol 1e-6); "
            f"mean proposed {mp:.3f}s vs TDMA {mt:.3f}s ({100 * (1 - mp / mt):.1f}% lower)"
        )

    return _timed("dominance_over_baselines", 120.0, run)


def check_power_trend(levels=(0.0, 5.0, 10.0, 15.0, 20.0), draws: int = 50) -> CheckResult:
    from .cli import sweep_rows

    def run():
        rows = sweep_rows("p_max_dbm", list(levels), draws, base_seed=0, schemes=["proposed"])
        means = [r["mean_delay_s"] for r in rows if not r["error"]]
        ok = len(means) == len(levels) and all(b < a for a, b in zip(means, means[1:]))
        return ok, "mean delay by p_max " + ", ".join(f"{lv:g}dBm:{m:.3f}s" for lv, m in zip(levels, means))

    return _timed("delay_decreases_with_power", 120.0, run)


def check_termination(n_scenarios: int = 20, eps0: float = 1e-3) -> CheckResult:
    def run():
        worst_w, worst_it = 0.0, 0
        scenarios = [generate_scenario(seed) for seed in range(n_scenarios)]
        scenarios += [toy_k2(s) for s in range(5)] + [_toy_k3(s) for s in range(5)]
        for sc in scenarios:
            meta = minimize_delay(sc, rel_tol=eps0).meta
            worst_w = max(worst_w, meta["bracket_rel_width"])
            worst_it = max(worst_it, meta["outer_iterations"])
        ok = worst_w <= eps0 and worst_it <= 60
        return ok, f"{len(scenarios)} scenarios: max final relative width {worst_w:.2e}, max iterations {worst_it} (<= 60)"

    return _timed("outer_bisection_termination", None, run)


def check_round_bound(seed: int = 0) -> CheckResult:
    def run():
        ds = fl_sim.synth_dataset(seed, K=5, d=10, samples=200, condition_number=2.0)
        L, gamma = fl_sim.estimate_smoothness(ds)
        cfg = LearningConfig(L, gamma, gamma / L, 1.0 / L, 1e-2)
        eta = 0.5
        bound = math.ceil(cfg.a / (1 - eta))
        log = fl_sim.federated_train(ds, fl_sim.Loss(), eta, cfg, max_rounds=bound)
        n = log.rounds_to_accuracy(1e-2)
        ok = n is not None and n <= bound
        return ok, f"reached accuracy 1e-2 in {n} rounds; bound ceil(a/(1-eta)) = {bound}"

    return _timed("global_round_bound", 30.0, run)


def check_loss_trajectories(rounds: int = 500, seed: int = 0) -> CheckResult:
    def run():
        ds = fl_sim.synth_dataset(seed, K=5, d=10, samples=200, condition_number=10.0)
        cfg = LearningConfig(1.0, 0.1, 0.1, 0.1, 1e-3)
        convex = fl_sim.federated_train(ds, fl_sim.Loss("convex"), 0.5, cfg, rounds, stop_at_accuracy=False)
        w0 = 0.01 * np.random.default_rng(seed).standard_normal(ds.dim)
        nonconvex = fl_sim.federated_train(
            ds, fl_sim.Loss("nonconvex"), 0.5, cfg, rounds, w0=w0, stop_at_accuracy=False
        )
        mono = fl_sim.is_nonincreasing(convex.losses)
        finite = all(math.isfinite(v) for v in nonconvex.losses)
        soft = fl_sim.is_nonincreasing(nonconvex.losses)
        ok = mono and finite and convex.rounds == rounds
        return ok, (
            f"convex {convex.losses[0]:.3g} -> {convex.losses[-1]:.3g} monotone={mono}; "
            f"nonconvex {nonconvex.losses[0]:.3g} -> {nonconvex.losses[-1]:.3g} finite={finite} "
            f"monotone(soft)={soft}"
        )

    return _timed("loss_trajectories", 60.0, run)


def check_gradients(probes: int = 100, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = {}

        def record(name, g, fd):
            err = float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12))
            worst[name] = max(worst.get(name, 0.0), err)

        for _ in range(probes):
            d = int(rng.integers(2, 8))
            users = tuple(
                fl_sim.UserData(rng.standard_normal((n, d)), rng.standard_normal(n))
                for n in rng.integers(3, 30, size=3)
            )
            ds = fl_sim.Dataset(users)
            w = rng.standard_normal(d)
            h = rng.standard_normal(d)
            xi = float(rng.uniform(0.01, 1.0))
            for loss in (fl_sim.Loss("convex"), fl_sim.Loss("nonconvex"), fl_sim.Loss("convex", ridge=0.3)):
                u = users[0]
                tag = f"{loss.kind.value}{'+ridge' if loss.ridge else ''}"
                record(f"local[{tag}]", fl_sim.local_gradient(w, u, loss),
                       finite_difference_gradient(lambda x: fl_sim.local_loss(x, u, loss), w))
                record(f"global[{tag}]", fl_sim.global_gradient(w, ds, loss),
                       finite_difference_gradient(lambda x: fl_sim.global_loss(x, ds, loss), w))
                gl = fl_sim.local_gradient(w, u, loss)
                gg = fl_sim.global_gradient(w, ds, loss)
                _, gs = fl_sim.surrogate_value_and_gradient(w, h, gl, gg, xi, u, loss)
                fd = finite_difference_gradient(
                    lambda x: fl_sim.surrogate_value_and_gradient(w, x, gl, gg, xi, u, loss)[0], h
                )
                record(f"surrogate[{tag}]", gs, fd)
        ok = all(v < 1e-6 for v in worst.values())
        return ok, "max relative errors: " + ", ".join(f"{k}={v:.1e}" for k, v in sorted(worst.items()))

    return _timed("gradient_finite_differences", 10.0, run)


FAST = {
    "lambert_w_roundtrip": check_lambert_roundtrip,
    "rate_inversion_roundtrip": check_rate_inversion,
    "inner_objective_convexity": lambda: check_convexity(n_scenarios=3),
    "gradient_finite_differences": lambda: check_gradients(probes=20),
}

FULL = {
    "lambert_w_roundtrip": check_lambert_roundtrip,
    "rate_inversion_roundtrip": check_rate_inversion,
    "inner_objective_convexity": check_convexity,
    "feasibility_oracle_equivalence": check_feasibility_oracle,
    "end_to_end_grid_optimality": check_end_to_end,
    "dominance_over_baselines": check_dominance,
    "delay_decreases_with_power": check_power_trend,
    "outer_bisection_termination": check_termination,
    "global_round_bound": check_round_bound,
    "loss_trajectories": check_loss_trajectories,
    "gradient_finite_differences": check_gradients,
}

LEVELS = {"fast": FAST, "full": FULL}


def run_checks(level: str = "fast", echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    if level not in LEVELS:
        raise ValueError(f"unknown verification level {level!r}; choose from {sorted(LEVELS)}")
    results = []
    for fn in LEVELS[level].values():
        res = fn()
        if echo:
            echo(res.line())
        results.append(res)
    return results
