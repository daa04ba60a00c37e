"""Figure rendering for experiment outputs.

Each runner's rows can be rendered to a PNG next to its CSV. Rendering is
presentation only; it never changes the emitted data.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

RC = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 130,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_recover(rows, path, title="Hessian recovery under worst-case corruption"):
    """Recovery error vs corruption level, one line per method variant."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        methods = sorted({r["method"] for r in rows})
        for method in methods:
            pts = sorted((r["eps"], r["error"]) for r in rows if r["method"] == method)
            ax.semilogy([p[0] for p in pts], [max(p[1], 1e-17) for p in pts],
                        marker=".", label=method)
        ax.set_xlabel("corruption level eps")
        ax.set_ylabel("relative recovery error")
        ax.set_title(title)
        ax.legend(ncol=2)
        _save(fig, path)


def plot_optimize(records, path, title="Optimization run"):
    """Objective value and gradient norm against gradient evaluations."""
    evals = [r.cum_grad_evals for r in records]
    fvals = np.array([r.f for r in records])
    gnorms = np.array([max(r.grad_norm, 1e-300) for r in records])
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        shift = fvals - fvals.min()
        ax1.semilogy(evals, np.maximum(shift, 1e-17), marker=".")
        ax1.set_xlabel("gradient evaluations")
        ax1.set_ylabel("f - best f")
        ax2.semilogy(evals, gnorms, marker=".", color="tab:orange")
        ax2.set_xlabel("gradient evaluations")
        ax2.set_ylabel("gradient norm")
        fig.suptitle(title)
        _save(fig, path)


def plot_spectrum(rows, path, title="Spectrum of the inverse-Hessian estimate"):
    """Eigenvalues against iteration (reference spike already excluded)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        if rows:
            its = [r["iter"] for r in rows]
            vals = [r["eigenvalue"] for r in rows]
            ax.scatter(its, vals, s=6, alpha=0.5)
            if min(vals) > 0:
                ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("eigenvalue")
        ax.set_title(title)
        _save(fig, path)
