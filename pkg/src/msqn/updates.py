"""Quasi-Newton search directions for all implemented update families.

Every family exposes the same two things: a direction for the optimizer loop
and an inverse-Hessian estimate as a linear operator (for the recovery
experiment and spectrum diagnostics). The symmetric multisecant families are
backed by the regularized symmetric Procrustes solver; multisecant Broyden,
L-BFGS, BFGS and DFP use their classical closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linesearch import LineSearchPolicy, step as ls_step
from .rsp import (
    RankDeficientError,
    RspFactors,
    RspProblem,
    ScaledIdentity,
    SingularCoreError,
    factorize,
    psd_project,
)
from .secant_store import SecantHistory

VARIANTS = (
    "sym-ms-1",
    "sym-ms-2",
    "broyden-1",
    "broyden-2",
    "lbfgs",
    "bfgs",
    "dfp",
    "gd",
)

CURVATURE_RTOL = 1e-12
INNER_CONDITION_LIMIT = 1e12
SPECTRUM_MAX_DIM = 1000
DENSE_CARRY_MAX_DIM = 2000
FLAG_FALLBACK = "fallback-reference"

SPECTRUM_SPIKE_RTOL = 1e-6


class SingularInnerMatrixError(Exception):
    """The m x m inner matrix of a Broyden update is numerically singular."""


@dataclass(frozen=True)
class UpdateKind:
    """Update family plus its knobs.

    reference_scale s defines B_ref = s I and H_ref = (1/s) I; lambda_bar is
    the relative regularization of the symmetric multisecant families
    (lam = lambda_bar * sigma_max(A)^2); psd_floor, when set, enables the
    robust projection of the small block before use.
    """

    variant: str
    lambda_bar: float = 0.0
    psd_floor: float | None = None
    reference_scale: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.lambda_bar < 0:
            raise ValueError("lambda_bar must be nonnegative")
        if self.reference_scale <= 0:
            raise ValueError("reference_scale must be positive")


def default_psd_floor(kind: UpdateKind) -> float:
    """Floor used when projection is requested without an explicit value."""
    scale = kind.reference_scale
    if kind.variant == "sym-ms-2":
        scale = 1.0 / scale
    return 1e-8 * scale


# ---------------------------------------------------------------------------
# inverse-Hessian estimates as operators


class _Operator:
    """Matvec-only linear operator with dense materialization for tests."""

    dim: int

    def matvec(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def matmat(self, m: np.ndarray) -> np.ndarray:
        return np.column_stack([self.matvec(col) for col in np.asarray(m, float).T])

    def materialize(self) -> np.ndarray:
        return self.matmat(np.eye(self.dim))


class ReferenceEstimate(_Operator):
    """(1/s) I, the estimate used before any secant data exists."""

    def __init__(self, dim: int, scale: float):
        self.dim = dim
        self.inv_scale = 1.0 / scale

    def matvec(self, v):
        return self.inv_scale * np.asarray(v, dtype=float)


class SymMultisecantEstimate(_Operator):
    """Inverse-Hessian estimate from the symmetric multisecant solver.

    Type II solves RSP(A = dG, D = dX, Zref = (1/s) I) and applies Z*;
    type I solves RSP(A = dX, D = dG, Zref = s I) and applies Z*^{-1}.
    """

    def __init__(self, dx, dg, scale, lambda_bar=0.0, type1=True,
                 psd_floor=None, rank_policy="error"):
        dx = np.asarray(dx, dtype=float)
        dg = np.asarray(dg, dtype=float)
        self.dim = dx.shape[0]
        self.type1 = bool(type1)
        if type1:
            a, d, ref = dx, dg, ScaledIdentity(scale)
        else:
            a, d, ref = dg, dx, ScaledIdentity(1.0 / scale)
        lam = lambda_bar * np.linalg.norm(a, 2) ** 2 if a.size else 0.0
        factors = factorize(RspProblem(A=a, D=d, lam=lam, zref=ref),
                            rank_policy=rank_policy)
        if psd_floor is not None:
            factors = psd_project(factors, psd_floor)
        self.factors: RspFactors = factors
        if type1:
            # surface ill-posedness at construction time
            self.factors._inverse_pieces()

    def matvec(self, v):
        if self.type1:
            return self.factors.apply_inverse(v)
        return self.factors.apply(v)


class BroydenOneEstimate(_Operator):
    """Multisecant Broyden type I inverse:

    B^{-1} = B0^{-1} + (dX - B0^{-1} dG) (dX^T B0^{-1} dG)^{-1} dX^T B0^{-1}
    with B0 = s I.
    """

    def __init__(self, dx, dg, scale):
        dx = np.asarray(dx, dtype=float)
        dg = np.asarray(dg, dtype=float)
        self.dim = dx.shape[0]
        self.inv_scale = 1.0 / scale
        inner = self.inv_scale * (dx.T @ dg)
        cond = np.linalg.cond(inner) if inner.size else np.inf
        if not np.isfinite(cond) or cond > INNER_CONDITION_LIMIT:
            raise SingularInnerMatrixError(
                f"dX^T B0^-1 dG condition {cond:.3e} exceeds {INNER_CONDITION_LIMIT:.1e}"
            )
        self.dx = dx
        self.u = dx - self.inv_scale * dg
        self.inner_inv = np.linalg.inv(inner)

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        w = self.inv_scale * (self.dx.T @ v)
        return self.inv_scale * v + self.u @ (self.inner_inv @ w)


class BroydenTwoEstimate(_Operator):
    """Multisecant Broyden type II: H = dX dG^+ + (1/s) (I - dG dG^+)."""

    def __init__(self, dx, dg, scale):
        dx = np.asarray(dx, dtype=float)
        dg = np.asarray(dg, dtype=float)
        self.dim = dx.shape[0]
        self.inv_scale = 1.0 / scale
        u, s, vt = np.linalg.svd(dg, full_matrices=False)
        if s.size == 0 or s[0] == 0 or s[-1] <= CURVATURE_RTOL * s[0]:
            raise RankDeficientError("dG is rank deficient at tolerance")
        self.pinv = (vt.T / s) @ u.T  # m x d
        self.dx = dx
        self.dg = dg

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        coeff = self.pinv @ v
        return self.dx @ coeff + self.inv_scale * (v - self.dg @ coeff)


class TwoLoopEstimate(_Operator):
    """L-BFGS two-loop recursion over curvature pairs with H0 = (1/s) I.

    Pairs failing the cautious filter s^T y > rtol ||s|| ||y|| are skipped.
    """

    def __init__(self, s_cols, y_cols, scale):
        self.dim = s_cols.shape[0] if s_cols.size else y_cols.shape[0]
        self.inv_scale = 1.0 / scale
        self.pairs = []
        for s, y in zip(np.asarray(s_cols, float).T, np.asarray(y_cols, float).T):
            sy = float(s @ y)
            if sy > CURVATURE_RTOL * np.linalg.norm(s) * np.linalg.norm(y):
                self.pairs.append((s, y, 1.0 / sy))

    def matvec(self, v):
        q = np.asarray(v, dtype=float).copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        r = self.inv_scale * q
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * (y @ r)
            r += (a - b) * s
        return r


class DenseEstimate(_Operator):
    """Explicit dense inverse-Hessian estimate (BFGS/DFP carries)."""

    def __init__(self, h: np.ndarray):
        self.h = np.asarray(h, dtype=float)
        self.dim = self.h.shape[0]

    def matvec(self, v):
        return self.h @ np.asarray(v, dtype=float)

    def materialize(self):
        return self.h.copy()


def bfgs_update(h: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rank-2 inverse-Hessian update satisfying H y = s exactly."""
    rho = 1.0 / float(s @ y)
    v = np.eye(h.shape[0]) - rho * np.outer(s, y)
    return v @ h @ v.T + rho * np.outer(s, s)


def dfp_update(h: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    hy = h @ y
    return h - np.outer(hy, hy) / float(y @ hy) + np.outer(s, s) / float(s @ y)


def curvature_ok(s: np.ndarray, y: np.ndarray) -> bool:
    return float(s @ y) > CURVATURE_RTOL * np.linalg.norm(s) * np.linalg.norm(y)


def dense_chain_estimate(dx, dg, scale, rule="bfgs") -> DenseEstimate:
    """Chain single-secant BFGS or DFP updates through the pair columns."""
    dx = np.asarray(dx, dtype=float)
    dg = np.asarray(dg, dtype=float)
    d = dx.shape[0]
    h = np.eye(d) / scale
    update = bfgs_update if rule == "bfgs" else dfp_update
    for s, y in zip(dx.T, dg.T):
        if curvature_ok(s, y):
            h = update(h, s, y)
    return DenseEstimate(h)


# ---------------------------------------------------------------------------
# optimizer state


class QnState:
    """Secant window plus method-specific carry for one optimizer run."""

    def __init__(self, kind: UpdateKind, dim: int, capacity: int):
        self.kind = kind
        self.dim = int(dim)
        self.history = SecantHistory(capacity=capacity, dim=dim)
        self.last_flag: str | None = None
        self._dense_h: np.ndarray | None = None
        if kind.variant in ("bfgs", "dfp") and dim > DENSE_CARRY_MAX_DIM:
            raise ValueError(
                f"dense {kind.variant} carry limited to d <= {DENSE_CARRY_MAX_DIM}"
            )

    def observe(self, x: np.ndarray, g: np.ndarray) -> None:
        """Record a new (iterate, gradient) pair, updating any dense carry."""
        if self.kind.variant in ("bfgs", "dfp") and len(self.history) > 0:
            x_prev, g_prev = self.history.matrices()
            s = np.asarray(x, float) - x_prev[:, -1]
            y = np.asarray(g, float) - g_prev[:, -1]
            if curvature_ok(s, y):
                h = self._dense_carry()
                rule = bfgs_update if self.kind.variant == "bfgs" else dfp_update
                self._dense_h = rule(h, s, y)
        self.history.push(x, g)

    def _dense_carry(self) -> np.ndarray:
        if self._dense_h is None:
            self._dense_h = np.eye(self.dim) / self.kind.reference_scale
        return self._dense_h

    def secant_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Current (dX, dG), truncated to the d most recent columns."""
        dx, dg = self.history.deltas()
        if dx.shape[1] > self.dim:
            dx = dx[:, -self.dim:]
            dg = dg[:, -self.dim:]
        return dx, dg

    def inverse_estimate(self) -> _Operator:
        """Inverse-Hessian estimate for the current window.

        Falls back to the reference operator (and sets last_flag) when the
        family's linear algebra is ill posed on the current data.
        """
        self.last_flag = None
        kind = self.kind
        s = kind.reference_scale
        dx, dg = self.secant_matrices()
        if kind.variant == "gd" or dx.shape[1] == 0:
            return ReferenceEstimate(self.dim, s)
        try:
            if kind.variant == "sym-ms-1":
                return SymMultisecantEstimate(
                    dx, dg, s, kind.lambda_bar, type1=True, psd_floor=kind.psd_floor
                )
            if kind.variant == "sym-ms-2":
                return SymMultisecantEstimate(
                    dx, dg, s, kind.lambda_bar, type1=False, psd_floor=kind.psd_floor
                )
            if kind.variant == "broyden-1":
                return BroydenOneEstimate(dx, dg, s)
            if kind.variant == "broyden-2":
                return BroydenTwoEstimate(dx, dg, s)
            if kind.variant == "lbfgs":
                return TwoLoopEstimate(dx, dg, s)
            return DenseEstimate(self._dense_carry())
        except (RankDeficientError, SingularCoreError, SingularInnerMatrixError):
            self.last_flag = FLAG_FALLBACK
            return ReferenceEstimate(self.dim, s)

    def direction(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape != (self.dim,):
            raise ValueError(f"expected a gradient of dimension {self.dim}")
        return -self.inverse_estimate().matvec(g)


# named direction entry points -----------------------------------------


def _directed(state: QnState, g, variant: str) -> np.ndarray:
    if state.kind.variant != variant:
        raise ValueError(f"state was built for {state.kind.variant!r}, not {variant!r}")
    return state.direction(g)


def direction_sym_type1(state: QnState, g) -> np.ndarray:
    """-Z*^{-1} g with A = dX, D = dG, Zref = B_ref; reference step if empty."""
    return _directed(state, g, "sym-ms-1")


def direction_sym_type2(state: QnState, g) -> np.ndarray:
    """-Z* g with A = dG, D = dX, Zref = H_ref; reference step if empty."""
    return _directed(state, g, "sym-ms-2")


def direction_broyden1(state: QnState, g) -> np.ndarray:
    return _directed(state, g, "broyden-1")


def direction_broyden2(state: QnState, g) -> np.ndarray:
    return _directed(state, g, "broyden-2")


def direction_lbfgs(state: QnState, g) -> np.ndarray:
    return _directed(state, g, "lbfgs")


def direction_bfgs(state: QnState, g) -> np.ndarray:
    return _directed(state, g, "bfgs")


def direction_dfp(state: QnState, g) -> np.ndarray:
    return _directed(state, g, "dfp")


# ---------------------------------------------------------------------------
# generalized step and preconditioned update


def generalized_step(state: QnState, v: np.ndarray, policy, obj) -> np.ndarray:
    """One generalized quasi-Newton step x+ = X v + h * direction(G v).

    v must sum to one over the stored window; the last-coordinate indicator
    reduces to the standard step. Unit step size preserves the invariance of
    the iterate under the choice of v on exact secant data.
    """
    xv, gv = state.history.combine(v)
    d = state.direction(gv)
    if policy is None:
        policy = LineSearchPolicy(kind="unit")
    if policy.kind == "unit":
        return xv + d
    result = ls_step(policy, obj, xv, d)
    return xv + result.h * d


class SemiImplicitEstimate(_Operator):
    """Preconditioned type II solution of W H dG = dG with W-weighted distance:

    H = W^{-1} dG T1^{-1} dG^T W^{-1} + (I - P1)^T H_ref (I - P1),
    T1 = dG^T W^{-1} dG, P1 = dG T1^{-1} dG^T W^{-1}.
    """

    def __init__(self, dg, w: np.ndarray, h_ref):
        dg = np.asarray(dg, dtype=float)
        w = np.asarray(w, dtype=float)
        self.dim = dg.shape[0]
        if np.isscalar(h_ref):
            self._href = lambda u: float(h_ref) * u
        else:
            href_mat = np.asarray(h_ref, dtype=float)
            self._href = lambda u: href_mat @ u
        w_inv_dg = np.linalg.solve(w, dg)
        t1 = dg.T @ w_inv_dg
        cond = np.linalg.cond(t1) if t1.size else np.inf
        if not np.isfinite(cond) or cond > INNER_CONDITION_LIMIT:
            raise SingularInnerMatrixError(f"T1 condition {cond:.3e} too large")
        self.w_inv_dg = w_inv_dg
        self.t1_inv = np.linalg.inv(t1)
        self.dg = dg

    def _proj(self, v):
        """(I - P1) v with P1 = dG T1^{-1} dG^T W^{-1}."""
        return v - self.dg @ (self.t1_inv @ (self.w_inv_dg.T @ v))

    def _proj_t(self, v):
        return v - self.w_inv_dg @ (self.t1_inv.T @ (self.dg.T @ v))

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        low = self.w_inv_dg @ (self.t1_inv @ (self.w_inv_dg.T @ v))
        return low + self._proj_t(self._href(self._proj(v)))


def semi_implicit_type2(dg, w, h_ref) -> SemiImplicitEstimate:
    """Operator form of the semi-implicit preconditioned type II update.

    h_ref may be a scalar (H_ref = h_ref I) or a symmetric matrix.
    """
    return SemiImplicitEstimate(dg, w, h_ref)


def semi_implicit_type1_inverse(dx, w, bref_scale: float) -> np.ndarray:
    """Dense B^{-1} of the semi-implicit type I update (test-scale only).

    B^{-1} = dX T2^{-1} dX^T + B0^{-1}
             - B0^{-1} W dX (dX^T W B0^{-1} W dX)^{-1} dX^T W B0^{-1},
    with T2 = dX^T W dX and B0 = bref_scale I.
    """
    dx = np.asarray(dx, dtype=float)
    w = np.asarray(w, dtype=float)
    d = dx.shape[0]
    b0_inv = np.eye(d) / bref_scale
    t2 = dx.T @ w @ dx
    wdx = w @ dx
    mid = wdx.T @ b0_inv @ wdx
    return (
        dx @ np.linalg.solve(t2, dx.T)
        + b0_inv
        - b0_inv @ wdx @ np.linalg.solve(mid, wdx.T @ b0_inv)
    )


# ---------------------------------------------------------------------------
# spectrum diagnostic


def spectrum_diagnostic(state: QnState, with_imag: bool = False):
    """Eigenvalues of the materialized inverse-Hessian estimate, ascending.

    Non-symmetric families report real parts; with_imag=True also returns
    the largest imaginary magnitude encountered.
    """
    if state.dim > SPECTRUM_MAX_DIM:
        raise ValueError(f"spectrum diagnostic limited to d <= {SPECTRUM_MAX_DIM}")
    mat = state.inverse_estimate().materialize()
    symmetric = state.kind.variant in ("sym-ms-1", "sym-ms-2", "lbfgs", "bfgs", "dfp", "gd")
    if symmetric:
        eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        max_imag = 0.0
    else:
        raw = np.linalg.eigvals(mat)
        eigs = np.sort(raw.real)
        max_imag = float(np.abs(raw.imag).max()) if raw.size else 0.0
    eigs = np.sort(np.asarray(eigs, dtype=float))
    if with_imag:
        return eigs, max_imag
    return eigs


def drop_reference_spike(eigs: np.ndarray, href: float) -> np.ndarray:
    """Remove eigenvalues matching the reference operator's value."""
    tol = SPECTRUM_SPIKE_RTOL * max(1.0, abs(href))
    return eigs[np.abs(eigs - href) > tol]
