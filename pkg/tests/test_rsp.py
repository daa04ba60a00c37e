import dataclasses

import numpy as np
import pytest

from msqn import rsp
from msqn.rsp import (
    DenseSymmetric,
    RankDeficientError,
    RspProblem,
    ScaledIdentity,
    SingularCoreError,
    bias_bound,
    brute_force_oracle,
    factorize,
    psd_project,
)


def random_problem(rng, d, m, lam, dense_ref=False, spd_ref=False):
    a = rng.standard_normal((d, m))
    dd = rng.standard_normal((d, m))
    if dense_ref:
        mat = rng.standard_normal((d, d))
        if spd_ref:
            q, _ = np.linalg.qr(mat)
            mat = (q * rng.uniform(0.5, 2.0, d)) @ q.T
        zref = DenseSymmetric(mat)
    else:
        zref = ScaledIdentity(float(rng.uniform(0.5, 3.0)))
    return RspProblem(A=a, D=dd, lam=lam, zref=zref)


# -- reference operators ------------------------------------------------------


def test_reference_operator_symmetry_and_inverse():
    rng = np.random.default_rng(0)
    for op in (ScaledIdentity(1.7), DenseSymmetric(rng.standard_normal((6, 6)))):
        for _ in range(5):
            v, w = rng.standard_normal(6), rng.standard_normal(6)
            assert v @ op.matvec(w) == pytest.approx(w @ op.matvec(v), abs=1e-12)
            assert np.linalg.norm(op.inv_matvec(op.matvec(v)) - v) < 1e-10


def test_dense_reference_symmetrized_on_construction():
    m = np.array([[1.0, 2.0], [0.0, 3.0]])
    op = DenseSymmetric(m)
    assert np.allclose(op.matrix, [[1.0, 1.0], [1.0, 3.0]])


# -- factorize ----------------------------------------------------------------


def test_identity_secant_identity_reference():
    # d=2, m=1, A = D = e1, lam = 0, Zref = I: the solution is the identity
    e1 = np.array([[1.0], [0.0]])
    fac = factorize(RspProblem(A=e1, D=e1, lam=0.0, zref=ScaledIdentity(1.0)))
    assert np.allclose(fac.materialize(), np.eye(2), atol=1e-14)
    v = np.array([0.3, -2.0])
    assert np.allclose(fac.apply(v), v, atol=1e-14)
    assert np.allclose(fac.apply_inverse(v), v, atol=1e-12)


def test_huge_lambda_collapses_to_reference():
    rng = np.random.default_rng(1)
    prob = RspProblem(
        A=rng.standard_normal((7, 3)),
        D=rng.standard_normal((7, 3)),
        lam=1e12,
        zref=ScaledIdentity(2.0),
    )
    fac = factorize(prob)
    for _ in range(5):
        v = rng.standard_normal(7)
        assert np.linalg.norm(fac.apply(v) - 2.0 * v) <= 1e-6 * np.linalg.norm(v)


def test_dense_reference_instance_matches_oracle():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((8, 3))
    dd = rng.standard_normal((8, 3))
    zref = DenseSymmetric(rng.standard_normal((8, 8)))
    prob = RspProblem(A=a, D=dd, lam=0.1, zref=zref)
    z_fac = factorize(prob).materialize()
    z_ora = brute_force_oracle(prob)
    assert np.linalg.norm(z_fac - z_ora) <= 1e-10 * np.linalg.norm(z_ora)


@pytest.mark.parametrize("lam", [0.0, 1e-6, 1e-2, 1.0])
@pytest.mark.parametrize("dense_ref", [False, True])
def test_oracle_equivalence_grid(lam, dense_ref):
    rng = np.random.default_rng(42 + int(lam * 1000) + dense_ref)
    for _ in range(8):
        d = int(rng.integers(4, 11))
        m = int(rng.integers(1, 5))
        prob = random_problem(rng, d, m, lam, dense_ref)
        if lam == 0.0:
            s = np.linalg.svd(prob.A, compute_uv=False)
            if s[-1] < 1e-3 * s[0]:
                continue
        z_fac = factorize(prob).materialize()
        z_ora = brute_force_oracle(prob)
        rel = np.linalg.norm(z_fac - z_ora) / np.linalg.norm(z_ora)
        assert rel <= 1e-8


def test_operator_symmetry():
    rng = np.random.default_rng(3)
    prob = random_problem(rng, 9, 4, 1e-3, dense_ref=True)
    fac = factorize(prob)
    for _ in range(10):
        v, w = rng.standard_normal(9), rng.standard_normal(9)
        assert v @ fac.apply(w) == pytest.approx(w @ fac.apply(v), abs=1e-12)


def test_apply_matches_materialization():
    rng = np.random.default_rng(4)
    prob = random_problem(rng, 10, 3, 0.05)
    fac = factorize(prob)
    z = fac.materialize()
    for _ in range(5):
        v = rng.standard_normal(10)
        assert np.linalg.norm(fac.apply(v) - z @ v) <= 1e-12 * np.linalg.norm(z @ v)


def test_secant_residual_vanishes_on_consistent_data():
    # D = Q A for symmetric Q: an exact symmetric solution exists at lam -> 0
    rng = np.random.default_rng(5)
    d, m = 10, 4
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    sym = (q * rng.uniform(0.5, 2.0, d)) @ q.T
    a = rng.standard_normal((d, m))
    prob = RspProblem(A=a, D=sym @ a, lam=0.0, zref=ScaledIdentity(1.0))
    fac = factorize(prob)
    res = np.column_stack([fac.apply(col) for col in a.T]) - sym @ a
    assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(sym @ a)


def test_rank_deficient_error_and_truncate_policy():
    a = np.zeros((5, 2))
    a[:, 0] = [1.0, 0, 0, 0, 0]
    a[:, 1] = [2.0, 0, 0, 0, 0]  # rank 1
    prob = RspProblem(A=a, D=a, lam=0.0, zref=ScaledIdentity(1.0))
    with pytest.raises(RankDeficientError):
        factorize(prob)
    fac = factorize(prob, rank_policy="truncate")
    assert fac.rank == 1
    # minimum-norm limit still reproduces the consistent part
    assert np.allclose(fac.apply(a[:, 0]), a[:, 0], atol=1e-10)


def test_shape_and_argument_validation():
    with pytest.raises(ValueError, match="shape"):
        RspProblem(A=np.zeros((3, 2)), D=np.zeros((3, 3)), lam=0.0,
                   zref=ScaledIdentity(1.0))
    with pytest.raises(ValueError, match="m <= d"):
        RspProblem(A=np.zeros((2, 3)), D=np.zeros((2, 3)), lam=0.0,
                   zref=ScaledIdentity(1.0))
    with pytest.raises(ValueError, match="nonnegative"):
        RspProblem(A=np.zeros((3, 2)), D=np.zeros((3, 2)), lam=-1.0,
                   zref=ScaledIdentity(1.0))
    prob = RspProblem(A=np.eye(3)[:, :1], D=np.eye(3)[:, :1], lam=0.0,
                      zref=ScaledIdentity(1.0))
    fac = factorize(prob)
    with pytest.raises(ValueError, match="dimension"):
        fac.apply(np.zeros(4))


def test_zero_column_problem_returns_reference():
    zref = ScaledIdentity(3.0)
    fac = factorize(RspProblem(A=np.zeros((4, 0)), D=np.zeros((4, 0)), lam=0.0,
                               zref=zref))
    v = np.arange(4.0)
    assert np.allclose(fac.apply(v), 3.0 * v)
    assert np.allclose(fac.apply_inverse(v), v / 3.0)


# -- inverse ------------------------------------------------------------------


def test_inverse_composition_identity():
    rng = np.random.default_rng(6)
    for trial in range(20):
        d = int(rng.integers(5, 12))
        m = int(rng.integers(1, 5))
        prob = random_problem(rng, d, m, [1e-2, 1.0][trial % 2],
                              dense_ref=bool(trial % 3 == 0))
        fac = factorize(prob)
        v = rng.standard_normal(d)
        w = fac.apply(fac.apply_inverse(v))
        assert np.linalg.norm(w - v) <= 1e-8 * np.linalg.norm(v)


def test_inverse_matches_dense_inverse():
    rng = np.random.default_rng(7)
    for dense_ref in (False, True):
        prob = random_problem(rng, 8, 3, 0.3, dense_ref=dense_ref, spd_ref=True)
        fac = factorize(prob)
        z_inv = np.linalg.inv(fac.materialize())
        cols = fac.apply_inverse_columns(np.eye(8))
        assert np.linalg.norm(cols - z_inv) <= 1e-8 * np.linalg.norm(z_inv)


def test_singular_core_raises():
    # A = D = e1 with Zref = I makes Z* = I except we shrink Z1 to zero by hand
    e1 = np.array([[1.0], [0.0], [0.0]])
    fac = factorize(RspProblem(A=e1, D=e1, lam=0.0, zref=ScaledIdentity(1.0)))
    broken = dataclasses.replace(fac, z1=np.zeros((1, 1)), _inv_cache={})
    with pytest.raises(SingularCoreError):
        broken.apply_inverse(np.ones(3))


# -- psd projection -----------------------------------------------------------


def test_psd_projection_inactive_when_already_feasible():
    # consistent SPD data keeps the Schur block positive; projection is a no-op
    rng = np.random.default_rng(8)
    d, m = 8, 3
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    spd = (q * rng.uniform(1.0, 2.0, d)) @ q.T
    a = rng.standard_normal((d, m))
    fac = factorize(RspProblem(A=a, D=spd @ a, lam=1e-8, zref=ScaledIdentity(1.0)))
    proj = psd_project(fac, 0.0)
    assert np.linalg.norm(proj.materialize() - fac.materialize()) <= 1e-12


@pytest.mark.parametrize("floor", [0.0, 0.1])
@pytest.mark.parametrize("dense_ref", [False, True])
def test_psd_projection_floors_spectrum(floor, dense_ref):
    rng = np.random.default_rng(9)
    for _ in range(5):
        d = int(rng.integers(6, 20))
        m = int(rng.integers(2, 5))
        prob = random_problem(rng, d, m, 1e-3, dense_ref=dense_ref, spd_ref=True)
        proj = psd_project(factorize(prob), floor)
        assert np.linalg.eigvalsh(proj.materialize())[0] >= floor - 1e-10


def test_factor_invariants():
    rng = np.random.default_rng(30)
    for trial in range(10):
        d = int(rng.integers(5, 12))
        m = int(rng.integers(1, 5))
        fac = factorize(random_problem(rng, d, m, [0.0, 1e-3][trial % 2]))
        assert np.linalg.norm(fac.v1.T @ fac.v1 - np.eye(fac.rank)) <= 1e-12
        assert np.abs(fac.z1 - fac.z1.T).max() <= 1e-12
        if fac.rank:
            assert np.abs(fac.z2 @ fac.v1).max() <= 1e-10


def test_psd_projection_idempotent():
    rng = np.random.default_rng(31)
    prob = random_problem(rng, 10, 3, 1e-3)
    once = psd_project(factorize(prob), 0.05)
    twice = psd_project(once, 0.05)
    assert np.linalg.norm(twice.materialize() - once.materialize()) <= 1e-10


def test_psd_projection_requires_positive_reference():
    rng = np.random.default_rng(10)
    prob = random_problem(rng, 6, 2, 1e-3, dense_ref=True)  # indefinite dense ref
    fac = factorize(prob)
    if fac.zref.min_eigenvalue(6) <= 0:
        with pytest.raises(ValueError, match="positive definite"):
            psd_project(fac, 0.0)
    with pytest.raises(ValueError, match="sigma_floor"):
        prob2 = random_problem(rng, 6, 2, 1e-3)
        psd_project(factorize(prob2), prob2.zref.c + 1.0)


# -- brute force oracle -------------------------------------------------------


def test_oracle_huge_lambda_returns_reference():
    rng = np.random.default_rng(11)
    zref = DenseSymmetric(rng.standard_normal((5, 5)))
    prob = RspProblem(A=rng.standard_normal((5, 2)),
                      D=rng.standard_normal((5, 2)), lam=1e12, zref=zref)
    assert np.abs(brute_force_oracle(prob) - zref.matrix).max() <= 1e-4


def test_oracle_consistent_system():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((6, 2))
    prob = RspProblem(A=a, D=a, lam=0.0, zref=ScaledIdentity(1.0))
    z = brute_force_oracle(prob)
    assert np.linalg.norm(z @ a - a) <= 1e-10


def test_oracle_local_optimality():
    rng = np.random.default_rng(13)
    prob = random_problem(rng, 6, 2, 0.3)
    z = brute_force_oracle(prob)
    f0 = rsp.rsp_objective(z, prob)
    for _ in range(10):
        pert = rng.standard_normal((6, 6))
        pert = pert + pert.T
        pert *= 1e-3 / np.linalg.norm(pert)
        assert f0 <= rsp.rsp_objective(z + pert, prob) + 1e-9


def test_oracle_rejects_large_dimension():
    d = rsp.ORACLE_MAX_DIM + 1
    prob = RspProblem(A=np.zeros((d, 1)), D=np.zeros((d, 1)), lam=1.0,
                      zref=ScaledIdentity(1.0))
    with pytest.raises(ValueError, match="oracle"):
        brute_force_oracle(prob)


def test_mutated_z2_breaks_oracle_equivalence():
    # the equivalence check must detect a sign flip in the complement block
    rng = np.random.default_rng(14)
    prob = random_problem(rng, 7, 3, 0.2)
    fac = factorize(prob)
    tampered = dataclasses.replace(fac, z2=-fac.z2, _inv_cache={})
    z_ora = brute_force_oracle(prob)
    rel = np.linalg.norm(tampered.materialize() - z_ora) / np.linalg.norm(z_ora)
    assert rel > 1e-8


# -- robustness bounds --------------------------------------------------------


def test_bias_bound_zero_lambda_trivial():
    rng = np.random.default_rng(15)
    prob = random_problem(rng, 6, 2, 0.0)
    fac0 = factorize(prob)
    measured, bound = bias_bound(fac0, fac0)
    assert measured == 0.0 and bound == 0.0


@pytest.mark.parametrize("lam", [1e-6, 1e-3, 1e-1])
def test_bias_bound_holds(lam):
    rng = np.random.default_rng(16)
    for _ in range(10):
        d = int(rng.integers(4, 9))
        m = int(rng.integers(1, 4))
        a = rng.standard_normal((d, m))
        dd = rng.standard_normal((d, m))
        zref = ScaledIdentity(1.0)
        fac0 = factorize(RspProblem(A=a, D=dd, lam=0.0, zref=zref))
        fac = factorize(RspProblem(A=a, D=dd, lam=lam, zref=zref))
        measured, bound = bias_bound(fac, fac0)
        assert measured <= bound


def test_stability_scaling_in_delta_over_lambda():
    rng = np.random.default_rng(17)
    a = rng.standard_normal((8, 3))
    dd = rng.standard_normal((8, 3))
    da = rng.standard_normal((8, 3))
    db = rng.standard_normal((8, 3))
    total = np.linalg.norm(da) + np.linalg.norm(db)
    da, db = da / total, db / total
    zref = ScaledIdentity(1.0)
    deltas = [1e-4, 1e-3, 1e-2]
    for lam in (1e-3, 1e-2):
        base = factorize(RspProblem(A=a, D=dd, lam=lam, zref=zref)).materialize()
        errs = [
            np.linalg.norm(
                factorize(
                    RspProblem(A=a + t * da, D=dd + t * db, lam=lam, zref=zref)
                ).materialize()
                - base
            )
            for t in deltas
        ]
        k_fit = errs[0] * lam / deltas[0]
        for t, err in zip(deltas[1:], errs[1:]):
            assert err <= 3.0 * k_fit * t / lam
