"""Robust symmetric multisecant quasi-Newton methods.

A regularized symmetric Procrustes solver provides symmetric Hessian (and
inverse-Hessian) estimates satisfying blocks of secant equations in a
least-squares sense, with a regularization knob trading bias for robustness
to gradient noise. Classical update families (multisecant Broyden, L-BFGS,
BFGS, DFP) are included as baselines, together with an experiment harness.
"""

from .ingest import ingest
from .linesearch import LineSearchPolicy, StepResult, step
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
from .rsp import (
    DenseSymmetric,
    RankDeficientError,
    RspFactors,
    RspProblem,
    ScaledIdentity,
    SingularCoreError,
    bias_bound,
    brute_force_oracle,
    factorize,
    psd_project,
)
from .secant_store import DifferenceOperator, SecantHistory, column_difference_matrix
from .updates import (
    QnState,
    UpdateKind,
    generalized_step,
    semi_implicit_type1_inverse,
    semi_implicit_type2,
    spectrum_diagnostic,
)

__version__ = "0.1.0"

__all__ = [
    "DenseSymmetric",
    "DifferenceOperator",
    "LineSearchPolicy",
    "QnState",
    "QuadraticObjective",
    "RankDeficientError",
    "RegressionObjective",
    "RspFactors",
    "RspProblem",
    "SagaState",
    "ScaledIdentity",
    "SecantHistory",
    "SingularCoreError",
    "StepResult",
    "UpdateKind",
    "bias_bound",
    "brute_force_oracle",
    "column_difference_matrix",
    "corrupt_worst_case",
    "factorize",
    "generalized_step",
    "ingest",
    "psd_project",
    "recovery_error",
    "saga_gradient",
    "semi_implicit_type1_inverse",
    "semi_implicit_type2",
    "spectrum_diagnostic",
    "step",
    "synthetic_quadratic",
    "synthetic_regression",
]
