"""Problem definitions and gradient oracles for the experiment harness.

Quadratics with known minimizer, ridge-regularized regression with square or
logistic loss, a SAGA minibatch estimator, the worst-case singular-value
corruption model, and the recovery-error metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAGA_MEMORY_CAP = 5e7  # N * d guard for the dense per-sample gradient table


@dataclass
class QuadraticObjective:
    """f(x) = 0.5 (x - x_star)^T Q (x - x_star) + f_star with SPD Q."""

    Q: np.ndarray
    x_star: np.ndarray
    f_star: float = 0.0

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.x_star = np.asarray(self.x_star, dtype=float)
        if not np.allclose(self.Q, self.Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    def value(self, x: np.ndarray) -> float:
        r = np.asarray(x, dtype=float) - self.x_star
        return float(0.5 * r @ (self.Q @ r) + self.f_star)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.Q @ (np.asarray(x, dtype=float) - self.x_star)

    def lipschitz(self) -> float:
        return float(np.linalg.eigvalsh(self.Q)[-1])


class RegressionObjective:
    """f(x) = (1/N) sum_i loss(a_i^T x, b_i) + (tau/2) ||x||^2.

    loss is "square" (0.5 (z - b)^2) or "logistic"
    (log(1 + exp(-b z)) with labels in {-1, +1}; {0, 1} labels are remapped
    at construction).
    """

    def __init__(self, data, labels, loss="square", tau=0.0):
        self.A = np.asarray(data, dtype=float)
        b = np.asarray(labels, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != b.shape[0]:
            raise ValueError("data must be (N, d) with one label per row")
        if self.A.shape[0] < 1:
            raise ValueError("need at least one sample")
        if not (np.isfinite(self.A).all() and np.isfinite(b).all()):
            raise ValueError("data and labels must be finite")
        if loss not in ("square", "logistic"):
            raise ValueError(f"unknown loss {loss!r}")
        if tau < 0:
            raise ValueError("ridge weight tau must be nonnegative")
        if loss == "logistic":
            b = remap_binary_labels(b)
        self.b = b
        self.loss = loss
        self.tau = float(tau)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_samples(self) -> int:
        return self.A.shape[0]

    def _margins(self, x):
        return self.A @ np.asarray(x, dtype=float)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        z = self._margins(x)
        if self.loss == "square":
            per = 0.5 * (z - self.b) ** 2
        else:
            per = np.logaddexp(0.0, -self.b * z)
        return float(per.mean() + 0.5 * self.tau * (x @ x))

    def loss_grad_scalars(self, x, rows=None) -> np.ndarray:
        """d loss / d z at the margins, per sample (or for the given rows)."""
        a = self.A if rows is None else self.A[rows]
        b = self.b if rows is None else self.b[rows]
        z = a @ np.asarray(x, dtype=float)
        if self.loss == "square":
            return z - b
        # -b * sigmoid(-b z); branch on the sign so exp never overflows
        t = b * z
        out = np.empty_like(t)
        pos = t >= 0
        e_neg = np.exp(-t[pos])
        out[pos] = e_neg / (1.0 + e_neg)
        out[~pos] = 1.0 / (1.0 + np.exp(t[~pos]))
        return -b * out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = self.loss_grad_scalars(x)
        return self.A.T @ s / self.n_samples + self.tau * x

    def sample_gradient(self, x, i: int) -> np.ndarray:
        """Loss-part gradient of sample i (ridge term excluded)."""
        s = self.loss_grad_scalars(x, rows=np.array([i]))
        return s[0] * self.A[i]

    def lipschitz(self) -> float:
        smax = np.linalg.norm(self.A, 2)
        base = smax**2 / self.n_samples
        if self.loss == "logistic":
            base /= 4.0
        return float(base + self.tau)

    def max_sample_lipschitz(self) -> float:
        row_sq = (self.A**2).sum(axis=1)
        base = row_sq.max()
        if self.loss == "logistic":
            base /= 4.0
        return float(base + self.tau)


def remap_binary_labels(b: np.ndarray) -> np.ndarray:
    """Map two-valued labels onto {-1, +1} (smaller value -> -1)."""
    vals = np.unique(b)
    if vals.size > 2:
        raise ValueError(f"logistic loss needs binary labels, got {vals.size} values")
    if vals.size == 1:
        return np.where(b == vals[0], 1.0, 1.0)
    if set(vals) == {-1.0, 1.0}:
        return b.astype(float)
    return np.where(b == vals[0], -1.0, 1.0)


# ---------------------------------------------------------------------------
# SAGA


class SagaState:
    """Per-sample gradient table, its running mean, and the batch sampler.

    For the linear models here the table stores the scalar loss derivative
    per sample (the gradient is that scalar times the data row); set
    store_vectors=True to keep full per-sample gradient vectors instead.
    The mean is maintained incrementally and recomputed periodically.
    """

    def __init__(self, obj: RegressionObjective, x0, batch_size: int, seed: int,
                 store_vectors: bool = False):
        if batch_size < 1:
            raise ValueError("batch size must be positive")
        n, d = obj.n_samples, obj.dim
        if store_vectors and n * d > SAGA_MEMORY_CAP:
            raise ValueError(
                f"vector table needs N*d <= {SAGA_MEMORY_CAP:g}, got {n * d:g}"
            )
        x0 = np.asarray(x0, dtype=float)
        self.batch_size = int(min(batch_size, n))
        self.rng = np.random.default_rng(seed)
        self.store_vectors = bool(store_vectors)
        scalars = obj.loss_grad_scalars(x0)
        if store_vectors:
            self.table = scalars[:, None] * obj.A
            self.table_mean = self.table.mean(axis=0)
        else:
            self.table = scalars.copy()
            self.table_mean = obj.A.T @ scalars / n
        self._updates_since_refresh = 0
        self._refresh_every = max(n // self.batch_size, 1) * 2

    def copy(self) -> "SagaState":
        dup = object.__new__(SagaState)
        dup.batch_size = self.batch_size
        dup.rng = np.random.default_rng()
        dup.rng.bit_generator.state = self.rng.bit_generator.state
        dup.store_vectors = self.store_vectors
        dup.table = self.table.copy()
        dup.table_mean = self.table_mean.copy()
        dup._updates_since_refresh = self._updates_since_refresh
        dup._refresh_every = self._refresh_every
        return dup

    def refresh_mean(self, obj: RegressionObjective) -> None:
        if self.store_vectors:
            self.table_mean = self.table.mean(axis=0)
        else:
            self.table_mean = obj.A.T @ self.table / obj.n_samples
        self._updates_since_refresh = 0


def saga_gradient(obj: RegressionObjective, state: SagaState, x,
                  batch=None) -> np.ndarray:
    """Unbiased SAGA estimate of the full gradient at x; updates the table.

    estimate = mean_{i in B} (grad_i(x) - table[i]) + table_mean + tau x.
    The batch is drawn without replacement from the state's generator unless
    given explicitly.
    """
    x = np.asarray(x, dtype=float)
    n = obj.n_samples
    if batch is None:
        batch = state.rng.choice(n, size=state.batch_size, replace=False)
    else:
        batch = np.asarray(batch, dtype=int)
    fresh = obj.loss_grad_scalars(x, rows=batch)
    if state.store_vectors:
        fresh_vecs = fresh[:, None] * obj.A[batch]
        delta = fresh_vecs - state.table[batch]
        estimate = delta.mean(axis=0) + state.table_mean + obj.tau * x
        state.table[batch] = fresh_vecs
        state.table_mean = state.table_mean + delta.sum(axis=0) / n
    else:
        delta = fresh - state.table[batch]
        estimate = (
            obj.A[batch].T @ delta / batch.size + state.table_mean + obj.tau * x
        )
        state.table[batch] = fresh
        state.table_mean = state.table_mean + obj.A[batch].T @ delta / n
    state._updates_since_refresh += 1
    if state._updates_since_refresh >= state._refresh_every:
        state.refresh_mean(obj)
    return estimate


# ---------------------------------------------------------------------------
# corruption model and recovery metric


def corrupt_worst_case(m: np.ndarray, eps: float) -> np.ndarray:
    """Shrink every singular value by eps * sigma_1 and clamp at zero.

    Left and right singular vectors are preserved; eps = 1 zeroes the matrix.
    """
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return m.copy()
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    shrunk = np.maximum(s - float(eps) * s[0], 0.0)
    return (u * shrunk) @ vt


def recovery_error(estimate, dg: np.ndarray, dx: np.ndarray) -> float:
    """Relative residual ||est(dG) - dX||_F / ||dX||_F of an inverse estimate.

    estimate may be a dense matrix, a callable on vectors, or an object with
    a matvec method. dg is the noise-free gradient-difference block.
    """
    dg = np.asarray(dg, dtype=float)
    dx = np.asarray(dx, dtype=float)
    denom = np.linalg.norm(dx)
    if denom == 0:
        raise ValueError("recovery error undefined for dX = 0")
    if isinstance(estimate, np.ndarray):
        fitted = estimate @ dg
    else:
        matvec = estimate.matvec if hasattr(estimate, "matvec") else estimate
        fitted = np.column_stack([matvec(col) for col in dg.T])
    return float(np.linalg.norm(fitted - dx) / denom)


# ---------------------------------------------------------------------------
# synthetic instances


def synthetic_quadratic(d: int, kappa: float, seed: int) -> QuadraticObjective:
    """Deterministic SPD quadratic with spectrum log-uniform on [1/kappa, 1]."""
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    rng = np.random.default_rng(seed)
    eigs = np.geomspace(1.0 / kappa, 1.0, d)
    q_rot, _ = np.linalg.qr(rng.standard_normal((d, d)))
    mat = (q_rot * eigs) @ q_rot.T
    x_star = rng.standard_normal(d)
    return QuadraticObjective(Q=0.5 * (mat + mat.T), x_star=x_star, f_star=0.0)


def synthetic_regression(n: int, d: int, kappa: float, loss: str = "square",
                         tau: float = 0.0, seed: int = 0) -> RegressionObjective:
    """Deterministic regression instance with controlled curvature spread.

    The data Gram spectrum is scaled so the condition number of
    (1/N) A^T A + tau I lands within a factor two of kappa.
    """
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    if n < d:
        raise ValueError("need n >= d to control the full spectrum")
    rng = np.random.default_rng(seed)
    if tau > 0:
        nu_max = tau * max(kappa - 1.0, 1e-12)
        nu_min = nu_max / (8.0 * kappa)
    else:
        nu_max, nu_min = 1.0, 1.0 / kappa
    nu = np.geomspace(nu_min, nu_max, d)
    left, _ = np.linalg.qr(rng.standard_normal((n, d)))
    right, _ = np.linalg.qr(rng.standard_normal((d, d)))
    a = (left * np.sqrt(n * nu)) @ right.T
    x_true = rng.standard_normal(d)
    noise = 0.1 * rng.standard_normal(n)
    scores = a @ x_true / np.sqrt(d)
    if loss == "logistic":
        labels = np.where(scores + noise >= 0, 1.0, -1.0)
    else:
        labels = scores + noise
    return RegressionObjective(a, labels, loss=loss, tau=tau)
