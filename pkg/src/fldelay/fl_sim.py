"""Federated training with gradient-corrected local problems.

Each round the server collects local gradients, broadcasts their average,
every user runs a fixed number of gradient steps on its corrected local
objective starting from ``h = 0``, and the server adds the average of the
returned updates to the global model. Linear regression only: squared loss,
optionally through a ReLU output.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import LearningConfig

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


class LossKind(str, enum.Enum):
    CONVEX = "convex"  # 1/2 (x.w - y)^2
    NONCONVEX = "nonconvex"  # 1/2 (max(x.w, 0) - y)^2


@dataclass(frozen=True)
class Loss:
    kind: LossKind = LossKind.CONVEX
    ridge: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")


@dataclass(frozen=True)
class UserData:
    X: np.ndarray
    y: np.ndarray

    @property
    def size(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class Dataset:
    users: tuple[UserData, ...]
    optimum_loss: float | None = None  # F(w*) when known

    def __post_init__(self):
        if not self.users:
            raise DatasetError("dataset has no users")
        d = self.users[0].X.shape[1]
        for k, u in enumerate(self.users):
            if u.X.ndim != 2 or u.X.shape[1] != d:
                raise DatasetError(f"user {k}: features must be a (D_k, {d}) matrix, got {u.X.shape}")
            if u.y.shape != (u.X.shape[0],):
                raise DatasetError(f"user {k}: {u.X.shape[0]} rows but targets of shape {u.y.shape}")
            if u.size < 1:
                raise DatasetError(f"user {k} has no samples")

    @property
    def dim(self) -> int:
        return self.users[0].X.shape[1]

    @property
    def K(self) -> int:
        return len(self.users)

    @property
    def total_samples(self) -> int:
        return sum(u.size for u in self.users)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _residual(w, data: UserData, loss: Loss):
    z = data.X @ w
    if loss.kind is LossKind.CONVEX:
        return z - data.y, None
    # subgradient of max(z, 0) taken as 0 at z == 0
    active = z > 0
    return np.where(active, z, 0.0) - data.y, active


def local_loss(w, data: UserData, loss: Loss = Loss()) -> float:
    r, _ = _residual(w, data, loss)
    val = 0.5 * float(r @ r) / data.size
    if loss.ridge:
        val += 0.5 * loss.ridge * float(w @ w)
    return val


def local_gradient(w, data: UserData, loss: Loss = Loss()) -> np.ndarray:
    r, active = _residual(w, data, loss)
    if active is not None:
        r = np.where(active, r, 0.0)
    g = data.X.T @ r / data.size
    if loss.ridge:
        g = g + loss.ridge * w
    return g


def global_loss(w, dataset: Dataset, loss: Loss = Loss()) -> float:
    """Sample-weighted average of the local losses."""
    D = dataset.total_samples
    return sum(u.size / D * local_loss(w, u, loss) for u in dataset.users)


def global_gradient(w, dataset: Dataset, loss: Loss = Loss()) -> np.ndarray:
    D = dataset.total_samples
    return sum(u.size / D * local_gradient(w, u, loss) for u in dataset.users)


def surrogate_value_and_gradient(w, h, grad_local_at_w, grad_global_at_w, xi, data: UserData, loss: Loss = Loss()):
    """Corrected local objective ``F_k(w+h) - (grad F_k(w) - xi grad F(w)) . h``."""
    lin = grad_local_at_w - xi * grad_global_at_w
    val = local_loss(w + h, data, loss) - float(lin @ h)
    grad = local_gradient(w + h, data, loss) - lin
    return val, grad


def local_iterations(v: float, eta: float) -> int:
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    return math.ceil(v * math.log2(1.0 / eta) - 1e-12)


def local_solve(w, grad_global, eta, data: UserData, config: LearningConfig, loss: Loss = Loss(), trace=None):
    """Gradient descent on the corrected local objective from ``h = 0``.

    Runs exactly ``ceil(v log2(1/eta))`` steps of size ``config.step``. If
    ``trace`` is a list, the objective value after every step is appended.
    """
    n_steps = local_iterations(config.v, eta)
    grad_local = local_gradient(w, data, loss)
    h = np.zeros_like(w)
    g0, grad = surrogate_value_and_gradient(w, h, grad_local, grad_global, config.xi, data, loss)
    if trace is not None:
        trace.append(g0)
    scale = max(abs(g0), 1e-300)
    for _ in range(n_steps):
        h = h - config.step * grad
        val, grad = surrogate_value_and_gradient(w, h, grad_local, grad_global, config.xi, data, loss)
        if not math.isfinite(val) or val - g0 > 1e6 * scale:
            raise DivergenceError(f"local objective blew up ({g0:.3g} -> {val:.3g}); step size too large?")
        if trace is not None:
            trace.append(val)
    return h


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    """One row per round; row 0 is the initial model."""

    losses: list[float] = field(default_factory=list)
    accuracy: list[float | None] = field(default_factory=list)
    local_iters: list[int] = field(default_factory=list)
    converged: bool = False

    @property
    def rounds(self) -> int:
        return len(self.losses) - 1

    def rounds_to_accuracy(self, target: float) -> int | None:
        for n, acc in enumerate(self.accuracy):
            if acc is not None and acc <= target:
                return n
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["round", "global_loss", "accuracy_ratio", "local_iters"])
        for n, (f, acc, it) in enumerate(zip(self.losses, self.accuracy, self.local_iters)):
            wr.writerow([n, repr(f), "" if acc is None else repr(acc), it])
        return buf.getvalue()


def federated_train(
    dataset: Dataset,
    loss: Loss,
    eta: float,
    config: LearningConfig,
    max_rounds: int,
    w0: np.ndarray | None = None,
    stop_at_accuracy: bool = True,
    rtol_stall: float = 1e-9,
) -> TrainLog:
    """Run federated rounds and log the global loss after each.

    Stops when the relative optimality gap drops to ``config.global_accuracy``
    (only when ``dataset.optimum_loss`` is known and ``stop_at_accuracy``),
    when the loss stalls (relative change below ``rtol_stall``, unknown
    optimum only), or after ``max_rounds``. Server-side averaging uses equal
    weights ``1/K``.
    """
    w = np.zeros(dataset.dim) if w0 is None else np.array(w0, dtype=float)
    K = dataset.K
    f_star = dataset.optimum_loss
    n_local = local_iterations(config.v, eta)

    f0 = global_loss(w, dataset, loss)
    log_ = TrainLog()

    def record(f, iters):
        acc = None
        if f_star is not None:
            gap0 = f0 - f_star
            acc = (f - f_star) / gap0 if gap0 > 0 else 0.0
        log_.losses.append(f)
        log_.accuracy.append(acc)
        log_.local_iters.append(iters)
        return acc

    acc = record(f0, 0)
    prev = f0
    for _ in range(max_rounds):
        if stop_at_accuracy and acc is not None and acc <= config.global_accuracy:
            log_.converged = True
            break
        grads = [local_gradient(w, u, loss) for u in dataset.users]
        g_bar = np.sum(grads, axis=0) / K
        # fixed user order keeps the reduction deterministic
        updates = [local_solve(w, g_bar, eta, u, config, loss) for u in dataset.users]
        w = w + np.sum(updates, axis=0) / K
        f = global_loss(w, dataset, loss)
        if not math.isfinite(f):
            log.warning("global loss became non-finite; stopping")
            record(f, n_local)
            break
        acc = record(f, n_local)
        if f_star is None and abs(prev - f) <= rtol_stall * max(abs(prev), 1e-300):
            log_.converged = True
            break
        prev = f
    else:
        if stop_at_accuracy and acc is not None and acc <= config.global_accuracy:
            log_.converged = True
    return log_


def is_nonincreasing(values: Sequence[float], rtol: float = 1e-12, floor: float = 1e-13) -> bool:
    """Monotone up to rounding; ``floor`` is relative to the first value."""
    atol = floor * abs(values[0]) if values else 0.0
    return all(b <= a + rtol * abs(a) + atol for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# Smoothness constants
# ---------------------------------------------------------------------------

def _power_extreme(H: np.ndarray, rtol: float, max_iter: int, rng) -> float:
    x = rng.standard_normal(H.shape[0])
    x /= np.linalg.norm(x)
    rho = float(x @ H @ x)
    for _ in range(max_iter):
        y = H @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        new = float(x @ H @ x)
        if abs(new - rho) <= rtol * abs(new):
            return new
        rho = new
    return rho


def estimate_smoothness(
    dataset: Dataset,
    loss: Loss = Loss(),
    rtol: float = 1e-8,
    max_iter: int = 100_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Global ``(L, gamma)`` over users from the extreme Hessian eigenvalues.

    Each user's Hessian is ``X^T X / D_k + ridge I``. The largest eigenvalue
    comes from power iteration; the smallest from power iteration on
    ``lambda_max I - H``.
    """
    if loss.kind is not LossKind.CONVEX:
        raise ValueError("smoothness constants are only defined for the convex squared loss")
    rng = np.random.default_rng(seed)
    L, gamma = 0.0, math.inf
    inner = rtol * 1e-4  # Rayleigh quotients converge twice as fast as vectors
    for u in dataset.users:
        H = u.X.T @ u.X / u.size + loss.ridge * np.eye(dataset.dim)
        lmax = _power_extreme(H, inner, max_iter, rng)
        shifted = lmax * np.eye(dataset.dim) - H
        lmin = lmax - _power_extreme(shifted, inner, max_iter, rng)
        L = max(L, lmax)
        gamma = min(gamma, lmin)
    if gamma <= abs(L) * 1e-12:
        log.warning("a local Hessian is singular: no strong convexity (add a ridge term)")
        gamma = 0.0
    return L, gamma


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def synth_dataset(
    seed: int,
    K: int,
    d: int,
    samples: int,
    condition_number: float = 1.0,
    noise: float = 0.0,
    lipschitz: float = 1.0,
) -> Dataset:
    """Linear-regression data where every local Hessian has a known spectrum.

    User ``k`` gets ``X_k = sqrt(D) U_k diag(sqrt(lambda)) V^T`` with ``U_k``
    orthonormal columns and a shared rotation ``V``, so each
    ``X_k^T X_k / D`` has eigenvalues spaced geometrically from
    ``lipschitz / condition_number`` to ``lipschitz``. Targets come from a
    planted weight vector; the noiseless optimum loss is 0.
    """
    if condition_number < 1:
        raise ValueError("condition_number must be >= 1")
    if samples < d:
        raise ValueError("need samples >= d for an exact spectrum")
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = lipschitz * condition_number ** -np.linspace(0.0, 1.0, d) if d > 1 else np.array([lipschitz])
    w_true = rng.standard_normal(d)
    users = []
    for _ in range(K):
        U, _ = np.linalg.qr(rng.standard_normal((samples, d)))
        X = math.sqrt(samples) * (U * np.sqrt(lam)) @ V.T
        y = X @ w_true
        if noise:
            y = y + noise * rng.standard_normal(samples)
        users.append(UserData(X, y))
    ds = Dataset(tuple(users), 0.0 if noise == 0 else None)
    if noise:
        ds = Dataset(ds.users, optimal_loss(ds))
    return ds


def optimal_loss(dataset: Dataset, loss: Loss = Loss()) -> float:
    """Exact minimum of the convex global loss (least squares / ridge)."""
    if loss.kind is not LossKind.CONVEX:
        raise ValueError("closed-form optimum only exists for the convex loss")
    D = dataset.total_samples
    H = sum(u.X.T @ u.X for u in dataset.users) / D + loss.ridge * np.eye(dataset.dim)
    rhs = sum(u.X.T @ u.y for u in dataset.users) / D
    w, *_ = np.linalg.lstsq(H, rhs, rcond=None)
    return global_loss(w, dataset, loss)


def read_csv_matrix(path: str | Path) -> np.ndarray:
    """Numeric-only CSV as a 2-D float array; header rows are rejected."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            vals = []
            for j, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DatasetError(f"{path}: row {i}, column {j}: not a number: {cell!r}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetError(f"{path}: row {i} has {len(vals)} columns, expected {width}")
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    if width < 2:
        raise DatasetError(f"{path}: need at least one feature column and a target column")
    return np.array(rows, dtype=float)


def partition_rows(n_rows: int, n_users: int, samples_per_user: int | None, seed: int) -> list[np.ndarray]:
    """Disjoint per-user row indices drawn without replacement."""
    if n_users < 1:
        raise DatasetError("need at least one user")
    if samples_per_user is None:
        samples_per_user = n_rows // n_users
    if samples_per_user < 1 or n_users * samples_per_user > n_rows:
        raise DatasetError(
            f"cannot give {n_users} users {samples_per_user} samples each from {n_rows} rows"
        )
    rng = np.random.default_rng(seed)
    drawn = rng.choice(n_rows, size=n_users * samples_per_user, replace=False)
    return [drawn[k * samples_per_user:(k + 1) * samples_per_user] for k in range(n_users)]


def load_csv(
    path: str | Path,
    n_users: int = 1,
    samples_per_user: int | None = None,
    seed: int = 0,
) -> Dataset:
    """Last column is the target, the rest are features."""
    M = read_csv_matrix(path)
    X, y = M[:, :-1], M[:, -1]
    parts = partition_rows(M.shape[0], n_users, samples_per_user, seed)
    return Dataset(tuple(UserData(X[idx], y[idx]) for idx in parts))
