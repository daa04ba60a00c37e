"""Closed-form solver for the regularized symmetric Procrustes problem.

Solves

    min_{Z = Z^T}  ||Z A - D||_F^2  +  (lam/2) ||Z - Zref||_F^2

for d x m data matrices A, D (m <= d) and a symmetric reference operator
Zref. The minimizer is kept in factored form (V1, sigma, Z1, Z2) so that
products with Z* and its inverse cost O(m^2 d); no d x d matrix is ever
formed on that path. A dense brute-force oracle over the d(d+1)/2 symmetric
degrees of freedom is provided for testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

RANK_RTOL = 1e-12
CORE_CONDITION_LIMIT = 1e14
ORACLE_MAX_DIM = 40


class RspError(Exception):
    """Base class for solver failures."""


class RankDeficientError(RspError):
    """A is rank deficient at the working tolerance while lam = 0."""


class SingularCoreError(RspError):
    """The small core matrix of the inverse is numerically singular.

    Callers should fall back to a reference-operator step or increase lam.
    """


# ---------------------------------------------------------------------------
# reference operators


class ScaledIdentity:
    """Reference operator c * I with O(d) products; the optimizer hot path."""

    kind = "scaled-identity"

    def __init__(self, c: float):
        c = float(c)
        if not np.isfinite(c) or c <= 0.0:
            raise ValueError(f"scale must be a positive real, got {c}")
        self.c = c

    def matvec(self, v):
        return self.c * np.asarray(v, dtype=float)

    def inv_matvec(self, v):
        return np.asarray(v, dtype=float) / self.c

    def matmat(self, m):
        return self.c * np.asarray(m, dtype=float)

    def inv_matmat(self, m):
        return np.asarray(m, dtype=float) / self.c

    def materialize(self, dim: int) -> np.ndarray:
        return self.c * np.eye(dim)

    def min_eigenvalue(self, dim: int) -> float:
        return self.c


class DenseSymmetric:
    """Dense symmetric reference operator; intended for tests and diagnostics.

    A non-symmetric input is replaced by its symmetric part. The inverse is
    factored once on first use.
    """

    kind = "dense-symmetric"

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        self.matrix = 0.5 * (m + m.T)
        self._inv = None

    def _inverse(self) -> np.ndarray:
        if self._inv is None:
            self._inv = np.linalg.inv(self.matrix)
        return self._inv

    def matvec(self, v):
        return self.matrix @ np.asarray(v, dtype=float)

    def inv_matvec(self, v):
        return self._inverse() @ np.asarray(v, dtype=float)

    def matmat(self, m):
        return self.matrix @ np.asarray(m, dtype=float)

    def inv_matmat(self, m):
        return self._inverse() @ np.asarray(m, dtype=float)

    def materialize(self, dim: int) -> np.ndarray:
        if dim != self.matrix.shape[0]:
            raise ValueError("dimension mismatch")
        return self.matrix.copy()

    def min_eigenvalue(self, dim: int) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


# ---------------------------------------------------------------------------
# problem and factors


@dataclass
class RspProblem:
    """Data (A, D), regularization weight lam >= 0, and reference operator."""

    A: np.ndarray
    D: np.ndarray
    lam: float
    zref: ScaledIdentity | DenseSymmetric

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        if self.A.ndim != 2 or self.A.shape != self.D.shape:
            raise ValueError(
                f"A and D must share a (d, m) shape, got {self.A.shape} and {self.D.shape}"
            )
        d, m = self.A.shape
        if m > d:
            raise ValueError(f"need m <= d, got m={m}, d={d}")
        if self.lam < 0 or not np.isfinite(self.lam):
            raise ValueError(f"lam must be a nonnegative real, got {self.lam}")

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass
class RspFactors:
    """Factored minimizer: Z* = V1 Z1 V1^T + V1 Z2 + Z2^T V1^T + (I-P) Zref (I-P).

    V1 (d x r) has orthonormal columns spanning range(A), sigma holds the
    retained singular values of A, Z2 maps into the orthogonal complement
    (Z2 V1 = 0). Immutable after factorization; inverse-side quantities are
    cached lazily.
    """

    v1: np.ndarray
    sigma: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    zref: ScaledIdentity | DenseSymmetric
    lam: float
    _inv_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.v1.shape[0]

    @property
    def rank(self) -> int:
        return self.v1.shape[1]

    # -- forward products ---------------------------------------------------

    def project_complement(self, v: np.ndarray) -> np.ndarray:
        """(I - P) v without materializing the complement basis."""
        if self.rank == 0:
            return v
        return v - self.v1 @ (self.v1.T @ v)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Z* v at O(m^2 d) plus one Zref product."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"expected a vector of dimension {self.dim}")
        w = self.project_complement(v)
        out = self.project_complement(self.zref.matvec(w))
        if self.rank:
            pv = self.v1.T @ v
            out = out + self.v1 @ (self.z1 @ pv) + self.v1 @ (self.z2 @ v)
            out = out + self.z2.T @ pv
        return out

    def apply_columns(self, m: np.ndarray) -> np.ndarray:
        return np.column_stack([self.apply(col) for col in np.asarray(m, float).T])

    def materialize(self) -> np.ndarray:
        """Dense Z*; for tests and small-scale diagnostics only."""
        d = self.dim
        eye = np.eye(d)
        comp = self.project_complement(self.zref.matmat(self.project_complement(eye)))
        if self.rank == 0:
            return comp
        z = self.v1 @ self.z1 @ self.v1.T + self.v1 @ self.z2 + self.z2.T @ self.v1.T
        return z + comp

    # -- inverse products ---------------------------------------------------

    def _complement_solve(self, m: np.ndarray) -> np.ndarray:
        """Apply (I-P) [ (I-P) Zref (I-P) + P ]^{-1} (I-P) columnwise.

        For Zref = c I this is (I-P)/c. For a dense reference the solve is
        reduced to Zref^{-1} plus a rank-2r Woodbury correction, so only
        reference inverse-products are needed.
        """
        m = self.project_complement(np.asarray(m, dtype=float))
        if isinstance(self.zref, ScaledIdentity):
            return m / self.zref.c
        if self.rank == 0:
            return self.zref.inv_matmat(m)
        key = "woodbury"
        if key not in self._inv_cache:
            v1 = self.v1
            g = self.zref.matmat(v1)
            w = np.hstack([v1, g])
            r = self.rank
            r1 = v1.T @ g
            # inverse of [[I + R1, -I], [-I, 0]]
            c_inv = np.block(
                [[np.zeros((r, r)), -np.eye(r)], [-np.eye(r), -(np.eye(r) + r1)]]
            )
            zi_w = self.zref.inv_matmat(w)
            mid = c_inv + w.T @ zi_w
            self._inv_cache[key] = (zi_w, np.linalg.inv(mid))
        zi_w, mid_inv = self._inv_cache[key]
        x = self.zref.inv_matmat(m) - zi_w @ (mid_inv @ (zi_w.T @ m))
        return self.project_complement(x)

    def _inverse_pieces(self):
        key = "pieces"
        if key not in self._inv_cache:
            if self.rank == 0:
                self._inv_cache[key] = None
            else:
                y = self._complement_solve(self.z2.T)  # (I-P) Zref|comp^{-1} Z2^T
                core = self.z1 - self.z2 @ y
                core = 0.5 * (core + core.T)
                cond = np.linalg.cond(core)
                if not np.isfinite(cond) or cond > CORE_CONDITION_LIMIT:
                    raise SingularCoreError(
                        f"inverse core condition {cond:.3e} exceeds "
                        f"{CORE_CONDITION_LIMIT:.1e}; fall back to the reference "
                        "step or increase lam"
                    )
                e = self.v1 - y
                self._inv_cache[key] = (e, np.linalg.inv(core))
        return self._inv_cache[key]

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        """Z*^{-1} v at O(m^2 d); raises SingularCoreError when ill posed."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"expected a vector of dimension {self.dim}")
        pieces = self._inverse_pieces()
        tail = self._complement_solve(v)
        if pieces is None:
            return tail
        e, core_inv = pieces
        return e @ (core_inv @ (e.T @ v)) + tail

    def apply_inverse_columns(self, m: np.ndarray) -> np.ndarray:
        return np.column_stack(
            [self.apply_inverse(col) for col in np.asarray(m, float).T]
        )


# ---------------------------------------------------------------------------
# factorization


def factorize(problem: RspProblem, rank_policy: str = "error") -> RspFactors:
    """Factor the unique minimizer (lam > 0) or its lam -> 0 limit.

    Computes the economic SVD A^T = U Sigma V1^T, the Hadamard-inverse
    weights S_ij = 1 / (sigma_i^2 + sigma_j^2 + lam), and

        Z1 = S o [V1^T (A D^T + D A^T + lam Zref) V1]
        Z2 = (Sigma^2 + lam I)^{-1} V1^T (A D^T + lam Zref) (I - P)

    Singular values at or below RANK_RTOL * sigma_max are truncated. At
    lam = 0 a nonempty truncation means A is rank deficient: the default
    rank_policy "error" raises RankDeficientError, while "truncate"
    returns the minimum-norm limit on the retained row space (Hadamard
    entries whose denominator would vanish are dropped).
    """
    if rank_policy not in ("error", "truncate"):
        raise ValueError(f"unknown rank_policy {rank_policy!r}")
    a, dmat, lam, zref = problem.A, problem.D, float(problem.lam), problem.zref
    d, m = a.shape

    if m == 0:
        return RspFactors(
            v1=np.zeros((d, 0)),
            sigma=np.zeros(0),
            z1=np.zeros((0, 0)),
            z2=np.zeros((0, d)),
            zref=zref,
            lam=lam,
        )

    # economic SVD of A^T: A = V1 diag(sigma) U^T
    u, s, vt = np.linalg.svd(a.T, full_matrices=False)
    smax = s[0] if s.size else 0.0
    keep = s > RANK_RTOL * smax if smax > 0 else np.zeros(s.shape, dtype=bool)
    r = int(keep.sum())
    if lam == 0.0 and r < m and rank_policy == "error":
        raise RankDeficientError(
            f"lam = 0 requires full column rank; rank {r} < m = {m} at relative "
            f"tolerance {RANK_RTOL:g}"
        )

    v1 = vt[:r].T  # d x r, orthonormal columns
    sigma = s[:r]
    if r == 0:
        return RspFactors(
            v1=v1,
            sigma=sigma,
            z1=np.zeros((0, 0)),
            z2=np.zeros((0, d)),
            zref=zref,
            lam=lam,
        )

    # V1^T A = Sigma U^T exactly, from the SVD factors; forming v1.T @ a
    # instead would add O(eps * sigma_max) noise to the small-sigma rows and
    # square the conditioning of the Hadamard solve below.
    u_r = u[:, :r]  # m x r
    zref_v1 = zref.matmat(v1)  # d x r

    # r x r block: S o [V1^T (A D^T + D A^T + lam Zref) V1]
    k_ad = sigma[:, None] * (u_r.T @ (dmat.T @ v1))
    k = k_ad + k_ad.T + lam * (v1.T @ zref_v1)
    s2 = sigma**2
    hadamard = 1.0 / (s2[:, None] + s2[None, :] + lam)
    z1 = hadamard * k
    z1 = 0.5 * (z1 + z1.T)

    # r x d block into the complement: (Sigma^2 + lam I)^{-1} V1^T (A D^T + lam Zref) (I-P)
    n2 = sigma[:, None] * (u_r.T @ dmat.T) + lam * zref_v1.T
    n2 = n2 - (n2 @ v1) @ v1.T
    z2 = n2 / (s2 + lam)[:, None]

    return RspFactors(v1=v1, sigma=sigma, z1=z1, z2=z2, zref=zref, lam=lam)


def apply(factors: RspFactors, v: np.ndarray) -> np.ndarray:
    return factors.apply(v)


def apply_inverse(factors: RspFactors, v: np.ndarray) -> np.ndarray:
    return factors.apply_inverse(v)


def materialize(factors: RspFactors) -> np.ndarray:
    return factors.materialize()


# ---------------------------------------------------------------------------
# positive semidefinite projection


def psd_project(factors: RspFactors, sigma_floor: float = 0.0) -> RspFactors:
    """Clamp the small block so the implied operator satisfies Z >= sigma_floor I.

    Writes Z in the [V1 | V2] basis, forms the floor-shifted Schur complement
    chi0 = Z1 - Z2 (V2^T Zref V2 - sigma I)^{-1}|_complement Z2^T, clamps its
    eigenvalues at sigma_floor, and adds the correction back. Only the r x r
    block is eigendecomposed. Requires a positive definite reference with
    lambda_min(Zref) > sigma_floor.
    """
    sigma_floor = float(sigma_floor)
    if sigma_floor < 0:
        raise ValueError("sigma_floor must be nonnegative")
    d = factors.dim
    min_ref = factors.zref.min_eigenvalue(d)
    if min_ref <= 0:
        raise ValueError("psd_project requires a positive definite reference operator")
    if sigma_floor >= min_ref:
        raise ValueError(
            f"sigma_floor {sigma_floor:g} must lie below the smallest reference "
            f"eigenvalue {min_ref:g}"
        )
    if factors.rank == 0:
        return factors

    if sigma_floor == 0.0:
        shifted = factors
    else:
        if isinstance(factors.zref, ScaledIdentity):
            shifted_ref = ScaledIdentity(factors.zref.c - sigma_floor)
        else:
            shifted_ref = DenseSymmetric(
                factors.zref.matrix - sigma_floor * np.eye(d)
            )
        shifted = replace(factors, zref=shifted_ref, _inv_cache={})

    correction = factors.z2 @ shifted._complement_solve(factors.z2.T)
    correction = 0.5 * (correction + correction.T)
    chi0 = factors.z1 - correction
    evals, evecs = np.linalg.eigh(0.5 * (chi0 + chi0.T))
    if evals[0] >= sigma_floor:
        return factors
    chi_star = (evecs * np.maximum(evals, sigma_floor)) @ evecs.T
    z1_new = chi_star + correction
    return replace(factors, z1=0.5 * (z1_new + z1_new.T), _inv_cache={})


# ---------------------------------------------------------------------------
# dense oracle and robustness bounds


def _symmetric_basis(d: int):
    """Index pairs (i, j), i <= j, of an orthonormal symmetric matrix basis."""
    return [(i, j) for i in range(d) for j in range(i, d)]


def _sym_coords(mat: np.ndarray, pairs) -> np.ndarray:
    """Coordinates of a symmetric matrix in the orthonormal basis."""
    root2 = np.sqrt(2.0)
    return np.array(
        [mat[i, i] if i == j else root2 * mat[i, j] for i, j in pairs]
    )


def _sym_from_coords(y: np.ndarray, pairs, d: int) -> np.ndarray:
    z = np.zeros((d, d))
    inv_root2 = 1.0 / np.sqrt(2.0)
    for yk, (i, j) in zip(y, pairs):
        if i == j:
            z[i, i] = yk
        else:
            z[i, j] = z[j, i] = yk * inv_root2
    return z


def brute_force_oracle(problem: RspProblem) -> np.ndarray:
    """Dense minimizer via regularized least squares over symmetric coordinates.

    Expands Z in an orthonormal basis of symmetric matrices and solves the
    normal equations of ||Z A - D||^2 + (lam/2) ||Z - Zref||^2 directly; for
    lam = 0 it returns the limit solution (the secant-consistent minimizer
    closest to Zref) via pseudo-inversion. O(d^6); test use only, d <= 40.
    """
    d, m = problem.A.shape
    if d > ORACLE_MAX_DIM:
        raise ValueError(f"oracle limited to d <= {ORACLE_MAX_DIM}, got d = {d}")
    pairs = _symmetric_basis(d)
    nsym = len(pairs)
    root2 = np.sqrt(2.0)

    # column k of H is vec(S_k A)
    h = np.zeros((d * m, nsym))
    for k, (i, j) in enumerate(pairs):
        sa = np.zeros((d, m))
        if i == j:
            sa[i] = problem.A[i]
        else:
            sa[i] = problem.A[j] / root2
            sa[j] = problem.A[i] / root2
        h[:, k] = sa.ravel()

    dvec = problem.D.ravel()
    zref_mat = problem.zref.materialize(d)
    yref = _sym_coords(zref_mat, pairs)

    lam = float(problem.lam)
    if lam > 0:
        lhs = h.T @ h + 0.5 * lam * np.eye(nsym)
        rhs = h.T @ dvec + 0.5 * lam * yref
        y = np.linalg.solve(lhs, rhs)
    else:
        y0, *_ = np.linalg.lstsq(h, dvec, rcond=None)
        yproj, *_ = np.linalg.lstsq(h, h @ yref, rcond=None)
        y = y0 + yref - yproj
    return _sym_from_coords(y, pairs, d)


def rsp_objective(z: np.ndarray, problem: RspProblem) -> float:
    """Objective value at a candidate symmetric matrix; test utility."""
    zref_mat = problem.zref.materialize(problem.dim)
    fit = np.linalg.norm(z @ problem.A - problem.D) ** 2
    reg = 0.5 * problem.lam * np.linalg.norm(z - zref_mat) ** 2
    return float(fit + reg)


def bias_bound(
    factors_lambda: RspFactors, factors_zero: RspFactors
) -> tuple[float, float]:
    """Measured ||Z*(lam) - Z*(0)||_F and its robustness bound.

    Both factorizations must come from the same (A, D, Zref). The bound is
    5 lam ||Z*(0) - Zref||_F / (sigma_min(A)^2 + lam); the contract is
    measured <= bound. Materializes both operators, so test scale only.
    """
    if factors_zero.lam != 0.0:
        raise ValueError("second argument must be the lam = 0 factorization")
    lam = float(factors_lambda.lam)
    z_lam = factors_lambda.materialize()
    z_zero = factors_zero.materialize()
    measured = float(np.linalg.norm(z_lam - z_zero))
    if lam == 0.0:
        return measured, 0.0
    zref_mat = factors_zero.zref.materialize(factors_zero.dim)
    sig_min = float(factors_zero.sigma.min()) if factors_zero.rank else 0.0
    dist = float(np.linalg.norm(z_zero - zref_mat))
    bound = 5.0 * lam * dist / (sig_min**2 + lam)
    return measured, bound
