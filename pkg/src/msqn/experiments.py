"""Experiment runners: Hessian recovery, optimization, spectrum dumps.

Every runner consumes an ExperimentConfig and emits rows that the CLI
serializes as CSV with a single '#'-prefixed JSON header carrying the
config and a schema version. Identical configs (including seed) produce
identical output; wall-clock timing is the one exception and can be
disabled.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import IngestError, ingest
from .linesearch import LineSearchPolicy, step as ls_step
from .objectives import (
    QuadraticObjective,
    RegressionObjective,
    SagaState,
    corrupt_worst_case,
    recovery_error,
    saga_gradient,
    synthetic_quadratic,
    synthetic_regression,
)
from .rsp import RankDeficientError, SingularCoreError
from .updates import (
    BroydenOneEstimate,
    BroydenTwoEstimate,
    QnState,
    ReferenceEstimate,
    SingularInnerMatrixError,
    SymMultisecantEstimate,
    TwoLoopEstimate,
    UpdateKind,
    default_psd_floor,
    dense_chain_estimate,
    drop_reference_spike,
    spectrum_diagnostic,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = "msqn-output-v1"
DIVERGENCE_LIMIT = 1e10

EXIT_CONVERGED = 0
EXIT_BUDGET = 2
EXIT_DIVERGED = 3
EXIT_INPUT_ERROR = 4

RECOVER_METHODS = (
    "diag",
    "lbfgs",
    "bfgs",
    "broyden-1",
    "broyden-2",
    "sym-ms-1",
    "sym-ms-2",
)

OPTIMIZE_FIELDS = ("iter", "f", "grad_norm", "step", "cum_grad_evals", "wall_ms", "flag")
RECOVER_FIELDS = ("eps", "method", "lambda_bar", "error", "flag")
SPECTRUM_FIELDS = ("iter", "eigenvalue")


class ConfigError(ValueError):
    """Invalid experiment configuration or dataset."""


@dataclass
class RunRecord:
    iter: int
    f: float
    grad_norm: float
    step: float
    cum_grad_evals: int
    wall_ms: float
    flag: str | None = None


@dataclass
class ExperimentConfig:
    """Knobs of one experiment; serialized into every output file."""

    method: str = "sym-ms-1"
    memory: int = 10  # 0 means full memory
    lambda_bar: float = 0.0
    seed: int = 0
    max_iters: int = 200
    tol: float = 1e-8
    batch_size: int = 0  # 0 means deterministic full gradient
    line_search: str = "unit"
    dataset: str = "quadratic:d=20,kappa=100"
    fmt: str = "csv"
    loss: str = "square"
    tau: float = 0.0
    average_iterates: bool = False
    psd_floor: float | str | None = None  # a float, None, or "auto"
    reference_scale: float | None = None  # None derives it from the objective
    eps_grid: list[float] = field(default_factory=lambda: [i / 10 for i in range(11)])
    measure_time: bool = True

    def to_jsonable(self) -> dict:
        return asdict(self)


def _parse_dataset_args(text: str) -> dict:
    out = {}
    for item in text.split(","):
        if not item:
            continue
        key, _, val = item.partition("=")
        if not _:
            raise ConfigError(f"bad dataset descriptor item {item!r}")
        out[key.strip()] = val.strip()
    return out


def build_objective(config: ExperimentConfig):
    """Materialize the configured objective (synthetic descriptor or file path)."""
    ds = config.dataset
    if ds.startswith("quadratic:"):
        args = _parse_dataset_args(ds[len("quadratic:"):])
        return synthetic_quadratic(
            d=int(args.get("d", 20)),
            kappa=float(args.get("kappa", 100)),
            seed=int(args.get("seed", config.seed)),
        )
    if ds.startswith("regression:"):
        args = _parse_dataset_args(ds[len("regression:"):])
        return synthetic_regression(
            n=int(args.get("n", 512)),
            d=int(args.get("d", 40)),
            kappa=float(args.get("kappa", 100)),
            loss=args.get("loss", config.loss),
            tau=float(args.get("tau", config.tau)),
            seed=int(args.get("seed", config.seed)),
        )
    try:
        return ingest(ds, fmt=config.fmt, loss=config.loss, tau=config.tau)
    except IngestError as exc:
        raise ConfigError(str(exc)) from exc


def _reference_scale(config: ExperimentConfig, obj, stochastic: bool) -> float:
    if config.reference_scale is not None:
        if config.reference_scale <= 0:
            raise ConfigError("reference scale must be positive")
        return float(config.reference_scale)
    if stochastic:
        # SAGA step-size convention 1/(3 max_i L_i)
        return 3.0 * obj.max_sample_lipschitz()
    return obj.lipschitz()


def _update_kind(config: ExperimentConfig, scale: float) -> UpdateKind:
    try:
        kind = UpdateKind(
            variant=config.method,
            lambda_bar=config.lambda_bar,
            reference_scale=scale,
        )
        floor = config.psd_floor
        if floor == "auto":
            floor = default_psd_floor(kind)
        elif floor is not None:
            floor = float(floor)
        if floor is not None:
            kind = UpdateKind(
                variant=kind.variant,
                lambda_bar=kind.lambda_bar,
                psd_floor=floor,
                reference_scale=kind.reference_scale,
            )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return kind


# ---------------------------------------------------------------------------
# optimization runs


def run_optimize(config: ExperimentConfig):
    """Run the configured method; returns (records, exit_code).

    Deterministic runs use the exact gradient and the configured line
    search; stochastic runs (batch_size > 0) use the SAGA estimator with
    forced unit steps. f and grad_norm in the records are exact monitoring
    values (evaluated at the running iterate average when
    average_iterates is set); they are not charged to cum_grad_evals.
    """
    obj = build_objective(config)
    d = obj.dim
    stochastic = config.batch_size > 0
    if stochastic and not isinstance(obj, RegressionObjective):
        raise ConfigError("stochastic runs need a regression objective")
    if config.max_iters < 1:
        raise ConfigError("max_iters must be positive")
    if config.tol < 0:
        raise ConfigError("tol must be nonnegative")

    scale = _reference_scale(config, obj, stochastic)
    kind = _update_kind(config, scale)
    capacity = config.memory if config.memory > 0 else max(config.max_iters + 1, d)
    try:
        state = QnState(kind, dim=d, capacity=capacity)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng_x0 = np.random.default_rng(seeds[0])
    if isinstance(obj, QuadraticObjective):
        x = rng_x0.standard_normal(d)
    else:
        x = np.zeros(d)

    saga = None
    cum = 0
    if stochastic:
        saga = SagaState(obj, x, config.batch_size, seed=seeds[1])
        cum += obj.n_samples  # table initialization
        policy = LineSearchPolicy(kind="unit")
    else:
        policy = LineSearchPolicy(kind=config.line_search)

    def oracle(point):
        nonlocal cum
        if stochastic:
            est = saga_gradient(obj, saga, point)
            cum += saga.batch_size
            return est
        cum += 1
        return obj.gradient(point)

    t0 = time.perf_counter()

    def wall():
        return (time.perf_counter() - t0) * 1e3 if config.measure_time else 0.0

    if stochastic:
        # the freshly initialized table already holds the exact gradient at x
        g_hat = saga.table_mean + obj.tau * x
    else:
        g_hat = oracle(x)
    state.observe(x, g_hat)
    x_sum = x.copy()
    true_g = obj.gradient(x) if stochastic else g_hat
    f_mon = obj.value(x)
    records = [
        RunRecord(
            iter=0,
            f=f_mon,
            grad_norm=float(np.linalg.norm(true_g)),
            step=0.0,
            cum_grad_evals=cum,
            wall_ms=wall(),
        )
    ]
    if records[0].grad_norm <= config.tol:
        return records, EXIT_CONVERGED

    status = EXIT_BUDGET
    for it in range(1, config.max_iters + 1):
        direction = state.direction(g_hat)
        flags = [state.last_flag] if state.last_flag else []
        if stochastic or policy.kind == "unit":
            h = 1.0
        else:
            result = ls_step(policy, obj, x, direction)
            cum += result.n_evals
            h = result.h
            if result.flag:
                flags.append(result.flag)
        x = x + h * direction
        g_hat = oracle(x)
        state.observe(x, g_hat)
        x_sum += x

        true_g = obj.gradient(x) if stochastic else g_hat
        grad_norm = float(np.linalg.norm(true_g))
        if config.average_iterates:
            f_mon = obj.value(x_sum / (it + 1))
        else:
            f_mon = obj.value(x)
        records.append(
            RunRecord(
                iter=it,
                f=f_mon,
                grad_norm=grad_norm,
                step=h,
                cum_grad_evals=cum,
                wall_ms=wall(),
                flag="+".join(flags) if flags else None,
            )
        )
        if not np.isfinite(f_mon) or not np.isfinite(x).all() or f_mon > DIVERGENCE_LIMIT:
            records[-1].flag = "diverged" if not flags else records[-1].flag + "+diverged"
            status = EXIT_DIVERGED
            break
        if grad_norm <= config.tol:
            status = EXIT_CONVERGED
            break
    return records, status


# ---------------------------------------------------------------------------
# Hessian recovery sweep


def gd_trajectory(obj: QuadraticObjective, n_points: int, seed: int):
    """(dX, dG) from a gradient-descent trajectory with step 1/L."""
    rng = np.random.default_rng(seed)
    lip = obj.lipschitz()
    xs, gs = [], []
    x = rng.standard_normal(obj.dim)
    for _ in range(n_points):
        g = obj.gradient(x)
        xs.append(x)
        gs.append(g)
        x = x - g / lip
    xs = np.column_stack(xs)
    gs = np.column_stack(gs)
    return np.diff(xs, axis=1), np.diff(gs, axis=1)


def recovery_estimate(method: str, dx, dg, scale: float, lambda_bar: float):
    """Inverse-Hessian estimate of one family; reference fallback when ill posed.

    The symmetric multisecant cells realize lambda_bar = 0 as the
    lam -> 0+ limit (minimum-norm truncation), which is what the corruption
    sweep compares the regularized variants against.
    """
    dim = dx.shape[0]
    try:
        if method == "diag":
            return ReferenceEstimate(dim, scale), None
        if method == "lbfgs":
            return TwoLoopEstimate(dx, dg, scale), None
        if method == "bfgs":
            return dense_chain_estimate(dx, dg, scale, rule="bfgs"), None
        if method == "broyden-1":
            return BroydenOneEstimate(dx, dg, scale), None
        if method == "broyden-2":
            return BroydenTwoEstimate(dx, dg, scale), None
        if method == "sym-ms-1":
            return (
                SymMultisecantEstimate(dx, dg, scale, lambda_bar, type1=True,
                                       rank_policy="truncate"),
                None,
            )
        if method == "sym-ms-2":
            return (
                SymMultisecantEstimate(dx, dg, scale, lambda_bar, type1=False,
                                       rank_policy="truncate"),
                None,
            )
    except (RankDeficientError, SingularCoreError, SingularInnerMatrixError):
        return ReferenceEstimate(dim, scale), "fallback-reference"
    raise ConfigError(f"unknown recovery method {method!r}")


def run_recover(config: ExperimentConfig):
    """Worst-case corruption sweep; returns (rows, exit_code).

    For each eps on the grid and each method, fits an inverse-Hessian
    estimate from (dX, corrupted dG) and reports the relative residual
    against the clean data. Symmetric multisecant methods appear twice:
    unregularized (lambda_bar = 0) and regularized (config.lambda_bar).
    """
    obj = build_objective(config)
    if not isinstance(obj, QuadraticObjective):
        raise ConfigError("run_recover expects a synthetic quadratic dataset")
    m = config.memory if config.memory > 0 else 20
    if m + 1 > obj.dim:
        raise ConfigError("memory must stay below the dimension for recovery")
    dx, dg = gd_trajectory(obj, m + 1, config.seed)
    scale = obj.lipschitz()

    rows = []
    for eps in config.eps_grid:
        dg_tilde = corrupt_worst_case(dg, eps)
        for method in RECOVER_METHODS:
            variants = [("", 0.0)]
            if method.startswith("sym-ms"):
                variants = [("0", 0.0), ("reg", config.lambda_bar)]
            for tag, lam_bar in variants:
                est, flag = recovery_estimate(method, dx, dg_tilde, scale, lam_bar)
                err = recovery_error(est, dg, dx)
                rows.append(
                    {
                        "eps": float(eps),
                        "method": method if not tag else f"{method}[{tag}]",
                        "lambda_bar": lam_bar,
                        "error": err,
                        "flag": flag,
                    }
                )
    return rows, EXIT_CONVERGED


# ---------------------------------------------------------------------------
# spectrum dumps


def run_spectrum(config: ExperimentConfig):
    """Per-iteration eigenvalue dumps of the inverse-Hessian estimate.

    The spike of eigenvalues matching the reference operator is excluded;
    for non-symmetric families the real parts are dumped and the largest
    imaginary magnitude is logged.
    """
    obj = build_objective(config)
    d = obj.dim
    if d > 1000:
        raise ConfigError("spectrum runs are limited to d <= 1000")
    scale = _reference_scale(config, obj, stochastic=False)
    kind = _update_kind(config, scale)
    capacity = config.memory if config.memory > 0 else d
    state = QnState(kind, dim=d, capacity=capacity)
    href = 1.0 / scale

    rng = np.random.default_rng(config.seed)
    x = rng.standard_normal(d) if isinstance(obj, QuadraticObjective) else np.zeros(d)
    rows = []
    g = obj.gradient(x)
    state.observe(x, g)
    for it in range(config.max_iters + 1):
        eigs, max_imag = spectrum_diagnostic(state, with_imag=True)
        if max_imag > 0:
            log.info("iter %d: max imaginary eigenvalue magnitude %.3e", it, max_imag)
        for val in drop_reference_spike(eigs, href):
            rows.append({"iter": it, "eigenvalue": float(val)})
        if it == config.max_iters:
            break
        x = x + state.direction(g)
        g = obj.gradient(x)
        state.observe(x, g)
    return rows, EXIT_CONVERGED


# ---------------------------------------------------------------------------
# CSV serialization


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # plain shortest round-trip form
    return str(value)


def write_csv(rows, fields, config: ExperimentConfig, fh, extras: dict | None = None):
    """Write rows (dicts or RunRecords) with the JSON config header line."""
    header = {"schema": SCHEMA_VERSION, "config": config.to_jsonable()}
    if config.average_iterates:
        header["averaging"] = "cumulative-from-iteration-0"
    if extras:
        header.update(extras)
    fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
    fh.write(",".join(fields) + "\n")
    for row in rows:
        if isinstance(row, RunRecord):
            row = asdict(row)
        fh.write(",".join(_format_value(row[k]) for k in fields) + "\n")
