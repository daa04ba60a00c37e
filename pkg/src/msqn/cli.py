"""Command line harness: recover, optimize, spectrum, selftest subcommands.

Results go to --out as CSV with a JSON header line; a PNG figure with the
same stem is rendered next to the CSV unless --no-plot is given. Without
--out the CSV goes to stdout and nothing is plotted.

Exit codes: 0 converged/complete, 2 iteration budget exhausted, 3 diverged,
4 input error (selftest exits 1 on any failing criterion).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import (
    EXIT_INPUT_ERROR,
    OPTIMIZE_FIELDS,
    RECOVER_FIELDS,
    SPECTRUM_FIELDS,
    ConfigError,
    ExperimentConfig,
    run_optimize,
    run_recover,
    run_spectrum,
    write_csv,
)
from .updates import VARIANTS


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--method", default="sym-ms-1", choices=VARIANTS)
    p.add_argument("--memory", type=int, default=10,
                   help="secant window size m; 0 means full memory")
    p.add_argument("--lambda-bar", type=float, default=0.0,
                   help="relative regularization of the symmetric multisecant solve")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8,
                   help="stop when the gradient norm falls below this")
    p.add_argument("--batch-size", type=int, default=0,
                   help="SAGA minibatch size; 0 runs the deterministic full gradient")
    p.add_argument("--line-search", default="unit",
                   choices=("unit", "dichotomy", "armijo"))
    p.add_argument("--dataset", default="quadratic:d=20,kappa=100",
                   help="file path or synthetic descriptor, e.g. quadratic:d=60,kappa=1000 "
                        "or regression:n=512,d=40,kappa=1000")
    p.add_argument("--format", dest="fmt", default="csv", choices=("csv", "libsvm"))
    p.add_argument("--loss", default="square", choices=("square", "logistic"))
    p.add_argument("--tau", type=float, default=0.0, help="ridge weight")
    p.add_argument("--psd-floor", default=None,
                   help="enable the robust PSD projection; a float or 'auto'")
    p.add_argument("--reference-scale", type=float, default=None,
                   help="override the reference operator scale s (B_ref = s I)")
    p.add_argument("--average-iterates", action="store_true",
                   help="report f at the running average of the iterates")
    p.add_argument("--no-timing", action="store_true",
                   help="zero the wall_ms column for byte-reproducible output")
    p.add_argument("--out", type=Path, default=None, help="output CSV path")
    p.add_argument("--no-plot", action="store_true",
                   help="skip the PNG figure next to --out")


def _config_from_args(args) -> ExperimentConfig:
    psd_floor = args.psd_floor
    if psd_floor is not None and psd_floor != "auto":
        try:
            psd_floor = float(psd_floor)
        except ValueError:
            raise ConfigError(f"--psd-floor expects a float or 'auto', got {psd_floor!r}")
    return ExperimentConfig(
        method=args.method,
        memory=args.memory,
        lambda_bar=args.lambda_bar,
        seed=args.seed,
        max_iters=args.max_iters,
        tol=args.tol,
        batch_size=args.batch_size,
        line_search=args.line_search,
        dataset=args.dataset,
        fmt=args.fmt,
        loss=args.loss,
        tau=args.tau,
        average_iterates=args.average_iterates,
        psd_floor=psd_floor,
        reference_scale=args.reference_scale,
        eps_grid=getattr(args, "eps_grid", None) or [i / 10 for i in range(11)],
        measure_time=not args.no_timing,
    )


def _emit(rows, fields, config, out: Path | None, plot, no_plot: bool):
    if out is None:
        write_csv(rows, fields, config, sys.stdout)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        write_csv(rows, fields, config, fh)
    if plot is not None and not no_plot:
        plot(rows, out.with_suffix(".png"))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="msqn",
        description="Symmetric multisecant quasi-Newton experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_rec = sub.add_parser("recover", help="Hessian recovery under corruption")
    _add_common(p_rec)
    p_rec.add_argument("--eps-grid", type=float, nargs="+", default=None,
                       help="corruption levels to sweep")
    p_rec.add_argument("--full-scale", action="store_true",
                       help="use d=250, m=50 instead of the desk-scale d=60, m=20 "
                            "(overrides --dataset and --memory)")
    p_rec.set_defaults(dataset="quadratic:d=60,kappa=10000", memory=20, lambda_bar=1e-10)

    p_opt = sub.add_parser("optimize", help="run one optimizer configuration")
    _add_common(p_opt)

    p_spec = sub.add_parser("spectrum", help="per-iteration eigenvalue dumps")
    _add_common(p_spec)

    p_self = sub.add_parser("selftest", help="run the acceptance suite at desk scale")
    p_self.add_argument("--criterion", type=int, default=None,
                        help="run a single criterion by number")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.command == "selftest":
        from .selftest import run_selftest

        return run_selftest(only=args.criterion)

    try:
        config = _config_from_args(args)
        if args.command == "recover":
            if args.full_scale:
                config.dataset = "quadratic:d=250,kappa=10000"
                config.memory = 50
            rows, code = run_recover(config)
            from .report import plot_recover

            _emit(rows, RECOVER_FIELDS, config, args.out, plot_recover, args.no_plot)
            return code
        if args.command == "optimize":
            records, code = run_optimize(config)
            from .report import plot_optimize

            def plot(rows, path):
                plot_optimize(records, path, title=f"{config.method} on {config.dataset}")

            _emit(records, OPTIMIZE_FIELDS, config, args.out, plot, args.no_plot)
            return code
        if args.command == "spectrum":
            rows, code = run_spectrum(config)
            from .report import plot_spectrum

            _emit(rows, SPECTRUM_FIELDS, config, args.out, plot_spectrum, args.no_plot)
            return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
