"""Contract checks on argument validation and less-traveled configuration paths."""

import json

import numpy as np
import pytest

from msqn import (
    LineSearchPolicy,
    QnState,
    ScaledIdentity,
    UpdateKind,
    generalized_step,
    synthetic_quadratic,
)
from msqn.cli import main as cli_main
from msqn.experiments import (
    RECOVER_FIELDS,
    ExperimentConfig,
    run_optimize,
    run_recover,
    write_csv,
)
from msqn.updates import default_psd_floor


def test_update_kind_validation():
    with pytest.raises(ValueError, match="variant"):
        UpdateKind(variant="newton")
    with pytest.raises(ValueError, match="lambda_bar"):
        UpdateKind(variant="sym-ms-1", lambda_bar=-1.0)
    with pytest.raises(ValueError, match="reference_scale"):
        UpdateKind(variant="sym-ms-1", reference_scale=0.0)


def test_scaled_identity_validation():
    with pytest.raises(ValueError, match="positive"):
        ScaledIdentity(0.0)
    with pytest.raises(ValueError, match="positive"):
        ScaledIdentity(float("nan"))


def test_default_psd_floor_scales_with_side():
    k1 = UpdateKind(variant="sym-ms-1", reference_scale=4.0)
    k2 = UpdateKind(variant="sym-ms-2", reference_scale=4.0)
    assert default_psd_floor(k1) == pytest.approx(4e-8)
    assert default_psd_floor(k2) == pytest.approx(1e-8 / 4.0)


def test_direction_rejects_wrong_dimension():
    state = QnState(UpdateKind(variant="gd"), dim=3, capacity=2)
    with pytest.raises(ValueError, match="dimension"):
        state.direction(np.zeros(4))


def test_gd_direction_is_scaled_negative_gradient():
    state = QnState(UpdateKind(variant="gd", reference_scale=2.0), dim=3, capacity=2)
    rng = np.random.default_rng(0)
    state.observe(rng.standard_normal(3), rng.standard_normal(3))
    g = rng.standard_normal(3)
    assert np.allclose(state.direction(g), -g / 2.0)


def test_generalized_step_with_line_search_decreases():
    rng = np.random.default_rng(1)
    obj = synthetic_quadratic(6, 20.0, 2)
    kind = UpdateKind(variant="sym-ms-1", lambda_bar=1e-8,
                      reference_scale=obj.lipschitz())
    state = QnState(kind, dim=6, capacity=6)
    x = rng.standard_normal(6)
    for _ in range(4):
        state.observe(x, obj.gradient(x))
        x = x + 0.3 * rng.standard_normal(6)
    n = len(state.history)
    v = np.zeros(n)
    v[-1] = 1.0
    x_plus = generalized_step(state, v, LineSearchPolicy(kind="dichotomy"), obj)
    xs, _ = state.history.matrices()
    assert obj.value(x_plus) <= obj.value(xs[:, -1])


def test_psd_floor_enabled_run_converges():
    config = ExperimentConfig(
        method="sym-ms-1",
        memory=8,
        lambda_bar=1e-8,
        psd_floor="auto",
        dataset="quadratic:d=12,kappa=50,seed=4",
        max_iters=80,
        tol=1e-8,
        line_search="dichotomy",
        measure_time=False,
    )
    records, code = run_optimize(config)
    assert code == 0
    assert records[-1].grad_norm <= 1e-8


def test_stochastic_forces_unit_steps():
    config = ExperimentConfig(
        method="gd",
        batch_size=8,
        line_search="dichotomy",  # ignored for stochastic runs
        dataset="regression:n=32,d=4,kappa=10,tau=0.1,seed=5",
        tau=0.1,
        max_iters=10,
        tol=0.0,
        measure_time=False,
    )
    records, _ = run_optimize(config)
    assert all(r.step == 1.0 for r in records[1:])


def test_recover_output_byte_deterministic():
    import io

    config = ExperimentConfig(dataset="quadratic:d=30,kappa=1000,seed=6",
                              memory=8, lambda_bar=1e-10, seed=6,
                              eps_grid=[0.0, 0.3, 1.0], measure_time=False)
    bufs = []
    for _ in range(2):
        rows, _ = run_recover(config)
        buf = io.StringIO()
        write_csv(rows, RECOVER_FIELDS, config, buf)
        bufs.append(buf.getvalue())
    assert bufs[0] == bufs[1]


def test_cli_optimize_on_ingested_file(tmp_path):
    rng = np.random.default_rng(7)
    path = tmp_path / "data.csv"
    with open(path, "w") as fh:
        for _ in range(40):
            row = rng.standard_normal(3)
            label = 1.0 if row.sum() + 0.2 * rng.standard_normal() > 0 else 0.0
            fh.write(",".join(repr(float(v)) for v in row) + f",{label}\n")
    out = tmp_path / "run.csv"
    code = cli_main([
        "optimize", "--dataset", str(path), "--format", "csv",
        "--loss", "logistic", "--tau", "0.01",
        "--method", "sym-ms-1", "--memory", "5", "--lambda-bar", "1e-8",
        "--line-search", "dichotomy", "--max-iters", "150", "--tol", "1e-6",
        "--no-timing", "--out", str(out),
    ])
    assert code == 0
    header = json.loads(out.read_text().splitlines()[0][2:])
    assert header["config"]["loss"] == "logistic"


def test_cli_bad_psd_floor_is_input_error():
    code = cli_main([
        "optimize", "--dataset", "quadratic:d=4,kappa=3,seed=0",
        "--psd-floor", "not-a-number", "--max-iters", "2",
    ])
    assert code == 4


def test_negative_lambda_bar_is_config_error():
    config = ExperimentConfig(method="sym-ms-1", lambda_bar=-0.5,
                              dataset="quadratic:d=4,kappa=3,seed=0",
                              max_iters=2)
    with pytest.raises(Exception) as excinfo:
        run_optimize(config)
    assert "lambda_bar" in str(excinfo.value)


def test_cli_selftest_single_criterion_passes(capsys):
    code = cli_main(["selftest", "--criterion", "7"])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS criterion  7" in out


def test_full_scale_recover_flag(tmp_path):
    out = tmp_path / "full.csv"
    code = cli_main([
        "recover", "--full-scale", "--eps-grid", "0.3",
        "--seed", "0", "--out", str(out), "--no-plot",
    ])
    assert code == 0
    header = json.loads(out.read_text().splitlines()[0][2:])
    assert header["config"]["dataset"].startswith("quadratic:d=250")
    assert header["config"]["memory"] == 50
