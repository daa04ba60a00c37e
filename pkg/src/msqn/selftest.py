"""Acceptance suite run by `msqn selftest` and by tests/test_acceptance.py.

Each criterion is a function returning (passed, detail). Tolerances are
fixed here; the pytest module asserts on the same functions so the CLI and
the test suite cannot drift apart.
"""

from __future__ import annotations

import itertools
import time

import numpy as np

from .experiments import ExperimentConfig, run_optimize, run_recover
from .linesearch import LineSearchPolicy
from .objectives import (
    QuadraticObjective,
    SagaState,
    saga_gradient,
    synthetic_quadratic,
    synthetic_regression,
)
from .rsp import (
    DenseSymmetric,
    RspProblem,
    ScaledIdentity,
    brute_force_oracle,
    bias_bound,
    factorize,
    psd_project,
)
from .updates import (
    BroydenOneEstimate,
    BroydenTwoEstimate,
    QnState,
    SymMultisecantEstimate,
    UpdateKind,
    generalized_step,
    semi_implicit_type1_inverse,
    semi_implicit_type2,
)


def _random_problem(rng, d, m, lam, dense_ref, full_rank=False):
    a = rng.standard_normal((d, m))
    if full_rank:
        # keep the lam = 0 cases comfortably full column rank
        while np.linalg.svd(a, compute_uv=False)[-1] < 1e-3 * np.linalg.norm(a, 2):
            a = rng.standard_normal((d, m))
    dmat = rng.standard_normal((d, m))
    if dense_ref:
        zref = DenseSymmetric(rng.standard_normal((d, d)))
    else:
        zref = ScaledIdentity(float(rng.uniform(0.5, 3.0)))
    return RspProblem(A=a, D=dmat, lam=lam, zref=zref)


def _unit_run(obj, variant, iters, seed, lambda_bar=0.0, capacity=None):
    """Unit-step run; returns the gradient norm sequence."""
    d = obj.dim
    kind = UpdateKind(variant=variant, lambda_bar=lambda_bar,
                      reference_scale=obj.lipschitz())
    state = QnState(kind, dim=d, capacity=capacity or (iters + 1))
    rng = np.random.default_rng(seed + 500)
    x = rng.standard_normal(d)
    g = obj.gradient(x)
    state.observe(x, g)
    norms = [np.linalg.norm(g)]
    for _ in range(iters):
        x = x + state.direction(g)
        g = obj.gradient(x)
        state.observe(x, g)
        norms.append(np.linalg.norm(g))
        if norms[-1] <= 1e-16 * norms[0]:
            break
    return np.asarray(norms)


# ---------------------------------------------------------------------------
# criteria


def check_oracle_equivalence():
    """200 random instances match the dense symmetric least-squares oracle."""
    rng = np.random.default_rng(20240001)
    lams = [0.0, 1e-6, 1e-2, 1.0]
    start = time.perf_counter()
    worst = 0.0
    for trial in range(200):
        d = int(rng.integers(4, 11))
        m = int(rng.integers(1, 5))
        lam = lams[trial % 4]
        prob = _random_problem(rng, d, m, lam, dense_ref=bool(trial % 2),
                               full_rank=(lam == 0.0))
        z_fac = factorize(prob).materialize()
        z_ora = brute_force_oracle(prob)
        rel = np.linalg.norm(z_fac - z_ora) / max(np.linalg.norm(z_ora), 1e-30)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed <= 30.0
    return ok, f"worst rel Frobenius {worst:.2e} (tol 1e-8), {elapsed:.1f}s (limit 30s)"


def check_inverse_formula():
    """apply o apply_inverse is the identity; dense inverse cross-check at d=8."""
    rng = np.random.default_rng(20240002)
    worst_comp = 0.0
    for trial in range(100):
        d = int(rng.integers(5, 13))
        m = int(rng.integers(1, 5))
        lam = [1e-2, 1.0][trial % 2]
        prob = _random_problem(rng, d, m, lam, dense_ref=bool(trial % 3 == 0))
        fac = factorize(prob)
        v = rng.standard_normal(d)
        w = fac.apply(fac.apply_inverse(v))
        worst_comp = max(worst_comp, np.linalg.norm(w - v) / np.linalg.norm(v))
    worst_dense = 0.0
    for trial in range(10):
        prob = _random_problem(rng, 8, 3, 0.5, dense_ref=bool(trial % 2))
        fac = factorize(prob)
        z_inv = np.linalg.inv(fac.materialize())
        cols = fac.apply_inverse_columns(np.eye(8))
        worst_dense = max(
            worst_dense, np.linalg.norm(cols - z_inv) / np.linalg.norm(z_inv)
        )
    ok = worst_comp <= 1e-8 and worst_dense <= 1e-8
    return ok, f"composition {worst_comp:.2e}, dense cross-check {worst_dense:.2e} (tol 1e-8)"


def check_complexity_scaling():
    """apply/apply_inverse wall time grows at most linearly from d=1000 to 2000."""
    rng = np.random.default_rng(20240003)
    m = 20

    def timed(d):
        a = rng.standard_normal((d, m))
        dmat = rng.standard_normal((d, m))
        fac = factorize(RspProblem(A=a, D=dmat, lam=1e-2, zref=ScaledIdentity(1.0)))
        v = rng.standard_normal(d)
        fac.apply_inverse(v)  # warm the lazy inverse pieces
        times = {"apply": [], "inverse": []}
        for _ in range(7):
            t0 = time.perf_counter()
            for _ in range(50):
                fac.apply(v)
            times["apply"].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            for _ in range(50):
                fac.apply_inverse(v)
            times["inverse"].append(time.perf_counter() - t0)
        return min(times["apply"]), min(times["inverse"])

    a1, i1 = timed(1000)
    a2, i2 = timed(2000)
    ratio_a, ratio_i = a2 / a1, i2 / i1
    ok = ratio_a <= 2.5 and ratio_i <= 2.5
    return ok, f"apply ratio {ratio_a:.2f}, inverse ratio {ratio_i:.2f} (limit 2.5)"


def check_finite_termination():
    """Full-memory unit-step runs reach 1e-10 relative within d+1 iterations."""
    start = time.perf_counter()
    worst = 0.0
    for d in (10, 20):
        for variant in ("sym-ms-1", "sym-ms-2"):
            for seed in range(5):
                obj = synthetic_quadratic(d, 3.0, seed)
                norms = _unit_run(obj, variant, d + 1, seed)
                worst = max(worst, norms.min() / norms[0])
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed <= 10.0
    return ok, f"worst rel grad {worst:.2e} (tol 1e-10), {elapsed:.1f}s (limit 10s)"


def check_minimal_polynomial_termination():
    """Three distinct eigenvalues at d=50 terminate within 5 iterations."""
    rng = np.random.default_rng(20240005)
    d = 50
    eigs = np.repeat([1.0, 0.1, 0.01], [17, 17, 16])
    rot, _ = np.linalg.qr(rng.standard_normal((d, d)))
    q = (rot * eigs) @ rot.T
    obj = QuadraticObjective(Q=0.5 * (q + q.T), x_star=rng.standard_normal(d))
    worst = 0.0
    for variant in ("sym-ms-1", "sym-ms-2"):
        norms = _unit_run(obj, variant, 5, seed=0)
        worst = max(worst, norms.min())
    return worst <= 1e-8, f"worst grad norm {worst:.2e} after 5 iterations (tol 1e-8)"


def check_rate_envelope():
    """Fitted log-residual slope beats the (1-sqrt(k))/(1+sqrt(k)) rate + 10%.

    Asserted for the families whose preconditioned-first-order structure is
    established: multisecant Broyden I/II and SymMS-I.
    """
    details = []
    ok = True
    for kappa in (10.0, 100.0):
        rho = (np.sqrt(kappa) - 1) / (np.sqrt(kappa) + 1)
        target = np.log(rho) + 0.1 * abs(np.log(rho))
        for variant in ("broyden-1", "broyden-2", "sym-ms-1"):
            worst = -np.inf
            for seed in range(5):
                obj = synthetic_quadratic(30, kappa, seed)
                norms = _unit_run(obj, variant, 15, seed)
                slope = np.polyfit(np.arange(len(norms)), np.log(norms), 1)[0]
                worst = max(worst, slope)
            if worst > target:
                ok = False
            details.append(f"{variant}@k={kappa:g}: {worst:+.3f}<={target:+.3f}")
    return ok, "; ".join(details)


def check_v_invariance():
    """Generalized steps agree across 5 random v's on exact secant data."""
    rng = np.random.default_rng(20240007)
    obj = synthetic_quadratic(8, 10.0, 3)
    worst = 0.0
    for variant in ("sym-ms-1", "sym-ms-2"):
        kind = UpdateKind(variant=variant, lambda_bar=0.0,
                          reference_scale=obj.lipschitz())
        state = QnState(kind, dim=8, capacity=10)
        x = rng.standard_normal(8)
        for _ in range(5):
            state.observe(x, obj.gradient(x))
            x = x + 0.3 * rng.standard_normal(8)
        state.observe(x, obj.gradient(x))
        n = len(state.history)
        unit = LineSearchPolicy(kind="unit")
        steps = []
        for _ in range(5):
            v = rng.standard_normal(n)
            v = v / v.sum()
            steps.append(generalized_step(state, v, unit, obj))
        worst = max(
            worst, max(np.linalg.norm(s - steps[0]) for s in steps[1:])
        )
    return worst <= 1e-10, f"max step spread {worst:.2e} (tol 1e-10)"


def check_bias_bound():
    """||Z*(lam) - Z*(0)||_F <= 5 lam ||Z*(0) - Zref||_F / (sig_min^2 + lam)."""
    rng = np.random.default_rng(20240008)
    lams = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1]
    worst_margin = 0.0
    for trial in range(100):
        d = int(rng.integers(4, 10))
        m = int(rng.integers(1, 4))
        lam = lams[trial % len(lams)]
        prob0 = _random_problem(rng, d, m, 0.0, dense_ref=bool(trial % 2),
                                full_rank=True)
        prob_lam = RspProblem(A=prob0.A, D=prob0.D, lam=lam, zref=prob0.zref)
        measured, bound = bias_bound(factorize(prob_lam), factorize(prob0))
        if bound > 0:
            worst_margin = max(worst_margin, measured / bound)
    ok = worst_margin <= 1.0
    return ok, f"worst measured/bound ratio {worst_margin:.3f} (must be <= 1)"


def check_stability_scaling():
    """Perturbation response fits K * delta / lam with slack 3 at larger delta."""
    rng = np.random.default_rng(20240009)
    deltas = [1e-4, 1e-3, 1e-2]
    worst = 0.0
    for trial in range(5):
        a = rng.standard_normal((8, 3))
        dmat = rng.standard_normal((8, 3))
        zref = ScaledIdentity(1.0)
        da = rng.standard_normal((8, 3))
        dd = rng.standard_normal((8, 3))
        total = np.linalg.norm(da) + np.linalg.norm(dd)
        da, dd = da / total, dd / total
        for lam in (1e-3, 1e-2):
            base = factorize(RspProblem(A=a, D=dmat, lam=lam, zref=zref)).materialize()
            errs = []
            for delta in deltas:
                pert = factorize(
                    RspProblem(A=a + delta * da, D=dmat + delta * dd, lam=lam,
                               zref=zref)
                ).materialize()
                errs.append(np.linalg.norm(pert - base))
            k_fit = errs[0] * lam / deltas[0]
            for delta, err in zip(deltas[1:], errs[1:]):
                worst = max(worst, err / (3.0 * k_fit * delta / lam))
    ok = worst <= 1.0
    return ok, f"worst err/(3 K delta/lam) {worst:.3f} (must be <= 1)"


def check_recovery_ordering():
    """At eps=0.3: regularization helps SymMS, and BFGS trails SymMS-II[reg].

    kappa = 1e4 keeps enough spread in the secant spectrum for the
    unregularized limit to show its instability at desk scale. An
    unregularized cell whose estimate was numerically singular (flagged
    reference fallback; its own inverse would have condition above 1e14)
    counts as unstable, so regularization wins that seed by definition.
    """
    reg_wins = {"sym-ms-1": 0, "sym-ms-2": 0}
    bfgs_worse = 0
    seeds = range(5)
    for seed in seeds:
        config = ExperimentConfig(
            dataset=f"quadratic:d=60,kappa=10000,seed={seed}",
            memory=20,
            lambda_bar=1e-10,
            seed=seed,
            eps_grid=[0.3],
        )
        rows, _ = run_recover(config)
        cells = {r["method"]: r for r in rows}
        for fam in reg_wins:
            reg = cells[f"{fam}[reg]"]
            unreg = cells[f"{fam}[0]"]
            if unreg["flag"] or reg["error"] <= unreg["error"] * (1 + 1e-9):
                reg_wins[fam] += 1
        if cells["bfgs"]["error"] >= cells["sym-ms-2[reg]"]["error"]:
            bfgs_worse += 1
    ok = all(v >= 4 for v in reg_wins.values()) and bfgs_worse >= 4
    return ok, (
        f"regularized<=unregularized: sym-ms-1 {reg_wins['sym-ms-1']}/5, "
        f"sym-ms-2 {reg_wins['sym-ms-2']}/5; bfgs>=sym-ms-2[reg]: {bfgs_worse}/5 "
        "(need 4/5 each)"
    )


def check_stochastic_comparison():
    """SAGA + SymMS-I beats plain SAGA at equal gradient budget on >= 3/5 seeds."""
    start = time.perf_counter()
    wins = 0
    for seed in range(5):
        finals = {}
        for method in ("sym-ms-1", "gd"):
            config = ExperimentConfig(
                method=method,
                memory=25,
                lambda_bar=1e-2 if method == "sym-ms-1" else 0.0,
                seed=seed,
                max_iters=240,
                tol=0.0,
                batch_size=64,
                dataset=f"regression:n=512,d=40,kappa=1000,tau=0.01,seed={seed}",
                loss="square",
                tau=0.01,
                average_iterates=True,
                measure_time=False,
            )
            records, _ = run_optimize(config)
            finals[method] = records[-1].f
        if finals["sym-ms-1"] <= finals["gd"]:
            wins += 1
    elapsed = time.perf_counter() - start
    ok = wins >= 3 and elapsed <= 120.0
    return ok, f"SymMS-I wins {wins}/5 (need 3), {elapsed:.0f}s (limit 120s)"


def check_secant_symmetry_suite():
    """Secant satisfaction, symmetry, and the Broyden-II asymmetry witness."""
    rng = np.random.default_rng(20240012)
    d, m = 12, 4
    rot, _ = np.linalg.qr(rng.standard_normal((d, d)))
    q = (rot * np.linspace(0.5, 3.0, d)) @ rot.T
    dx = rng.standard_normal((d, m))
    dg = q @ dx  # consistent symmetric system
    scale = float(np.linalg.eigvalsh(q)[-1])

    worst_fit = 0.0
    sym1 = SymMultisecantEstimate(dx, dg, scale, 0.0, type1=True)
    fitted = np.column_stack([sym1.factors.apply(c) for c in dx.T])
    worst_fit = max(worst_fit, np.linalg.norm(fitted - dg) / np.linalg.norm(dg))
    for est in (
        SymMultisecantEstimate(dx, dg, scale, 0.0, type1=False),
        BroydenOneEstimate(dx, dg, scale),
        BroydenTwoEstimate(dx, dg, scale),
    ):
        fitted = est.matmat(dg)
        worst_fit = max(worst_fit, np.linalg.norm(fitted - dx) / np.linalg.norm(dx))

    worst_sym = 0.0
    for type1 in (True, False):
        mat = SymMultisecantEstimate(dx, dg, scale, 1e-6, type1=type1).materialize()
        worst_sym = max(worst_sym, np.abs(mat - mat.T).max())

    dx_w = rng.standard_normal((d, m))
    dg_w = rng.standard_normal((d, m))  # dx^T dg not symmetric
    h_b2 = BroydenTwoEstimate(dx_w, dg_w, scale).materialize()
    witness = np.linalg.norm(h_b2 - h_b2.T)

    ok = worst_fit <= 1e-8 and worst_sym <= 1e-10 and witness > 1e-6
    return ok, (
        f"secant residual {worst_fit:.2e} (tol 1e-8), symmetry {worst_sym:.2e} "
        f"(tol 1e-10), asymmetry witness {witness:.2e} (> 1e-6)"
    )


def check_psd_projection():
    """Projected operators have minimum eigenvalue >= floor - 1e-10."""
    rng = np.random.default_rng(20240013)
    worst = np.inf
    for trial in range(20):
        d = int(rng.integers(8, 31))
        m = int(rng.integers(2, 6))
        a = rng.standard_normal((d, m))
        dmat = rng.standard_normal((d, m))
        if trial % 2:
            zref = ScaledIdentity(1.0)
        else:
            rot, _ = np.linalg.qr(rng.standard_normal((d, d)))
            zref = DenseSymmetric((rot * rng.uniform(0.6, 2.0, d)) @ rot.T)
        floor = [0.0, 0.1][trial % 2]
        fac = factorize(RspProblem(A=a, D=dmat, lam=1e-3, zref=zref))
        proj = psd_project(fac, floor)
        min_eig = np.linalg.eigvalsh(proj.materialize())[0]
        worst = min(worst, min_eig - floor)
    ok = worst >= -1e-10
    return ok, f"worst (min eig - floor) = {worst:.2e} (must be >= -1e-10)"


def check_preconditioned_constraint():
    """Semi-implicit updates satisfy their preconditioned secant constraints."""
    rng = np.random.default_rng(20240014)
    worst2 = worst1 = 0.0
    for trial in range(50):
        d = int(rng.integers(6, 13))
        m = int(rng.integers(1, 5))
        rot, _ = np.linalg.qr(rng.standard_normal((d, d)))
        w = (rot * rng.uniform(0.5, 2.0, d)) @ rot.T
        dg = rng.standard_normal((d, m))
        href = 0.7 if trial % 2 else (rot * rng.uniform(0.4, 1.5, d)) @ rot.T
        h = semi_implicit_type2(dg, w, href).materialize()
        worst2 = max(worst2, np.linalg.norm(w @ h @ dg - dg) / np.linalg.norm(dg))

        dx = rng.standard_normal((d, m))
        b_inv = semi_implicit_type1_inverse(dx, w, bref_scale=1.3)
        b = np.linalg.inv(b_inv)
        worst1 = max(
            worst1,
            np.linalg.norm(np.linalg.solve(w, b @ dx) - dx) / np.linalg.norm(dx),
        )
    ok = worst2 <= 1e-10 and worst1 <= 1e-10
    return ok, f"type-II residual {worst2:.2e}, type-I residual {worst1:.2e} (tol 1e-10)"


def check_gradient_correctness():
    """Central finite differences and exhaustive SAGA unbiasedness."""
    rng = np.random.default_rng(20240015)
    worst_fd = 0.0
    for loss in ("square", "logistic"):
        for tau in (0.0, 0.05):
            obj = synthetic_regression(30, 6, 50.0, loss=loss, tau=tau, seed=1)
            x = rng.standard_normal(6)
            g = obj.gradient(x)
            fd = np.zeros_like(g)
            h = 1e-6
            for i in range(6):
                e = np.zeros(6)
                e[i] = h
                fd[i] = (obj.value(x + e) - obj.value(x - e)) / (2 * h)
            worst_fd = max(worst_fd, np.abs(g - fd).max())

    obj = synthetic_regression(12, 4, 10.0, loss="logistic", tau=0.03, seed=2)
    x0 = rng.standard_normal(4)
    x = rng.standard_normal(4)
    full = obj.gradient(x)
    worst_saga = 0.0
    for size in (1, 2):
        base = SagaState(obj, x0, batch_size=size, seed=0)
        batches = list(itertools.combinations(range(obj.n_samples), size))
        acc = np.zeros(4)
        for batch in batches:
            acc += saga_gradient(obj, base.copy(), x, batch=np.array(batch))
        worst_saga = max(worst_saga, np.abs(acc / len(batches) - full).max())
    ok = worst_fd <= 1e-5 and worst_saga <= 1e-10
    return ok, f"FD error {worst_fd:.2e} (tol 1e-5), SAGA bias {worst_saga:.2e} (tol 1e-10)"


CRITERIA = [
    (1, "oracle equivalence of the factored solver", check_oracle_equivalence),
    (2, "inverse formula consistency", check_inverse_formula),
    (3, "linear-in-dimension product cost", check_complexity_scaling),
    (4, "finite termination on quadratics", check_finite_termination),
    (5, "minimal-polynomial termination", check_minimal_polynomial_termination),
    (6, "convergence rate envelope", check_rate_envelope),
    (7, "invariance under the combination vector", check_v_invariance),
    (8, "regularization bias bound", check_bias_bound),
    (9, "perturbation stability scaling", check_stability_scaling),
    (10, "recovery-experiment ordering", check_recovery_ordering),
    (11, "stochastic comparison at equal budget", check_stochastic_comparison),
    (12, "secant and symmetry invariants", check_secant_symmetry_suite),
    (13, "positive semidefinite projection", check_psd_projection),
    (14, "preconditioned secant constraints", check_preconditioned_constraint),
    (15, "gradient oracles and SAGA unbiasedness", check_gradient_correctness),
]


def run_selftest(only: int | None = None) -> int:
    failures = 0
    for number, title, fn in CRITERIA:
        if only is not None and number != only:
            continue
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashed criterion is a failure
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        status = "PASS" if passed else "FAIL"
        print(f"{status} criterion {number:2d} - {title}: {detail}")
        failures += 0 if passed else 1
    return 1 if failures else 0
