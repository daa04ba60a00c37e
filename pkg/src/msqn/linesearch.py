"""Step-size policies: unit step, derivative-sign dichotomy, Armijo backtracking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FLAG_NO_DECREASE = "no-decrease"


@dataclass(frozen=True)
class LineSearchPolicy:
    """kind is one of "unit", "dichotomy", "armijo".

    dichotomy brackets [0, h_max] by doubling from h = 1 while f decreases,
    then bisects on the sign of the directional derivative until the
    interval is below tol (relative) or max_iters is hit. armijo backtracks
    until the sufficient-decrease condition holds.
    """

    kind: str = "unit"
    max_iters: int = 30
    bracket_growth: float = 2.0
    tol: float = 1e-8
    c1: float = 1e-4
    backtrack: float = 0.5

    def __post_init__(self):
        if self.kind not in ("unit", "dichotomy", "armijo"):
            raise ValueError(f"unknown line search kind {self.kind!r}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.bracket_growth <= 1:
            raise ValueError("bracket growth must exceed 1")


@dataclass
class StepResult:
    h: float
    f_new: float
    n_evals: int
    flag: str | None = None


def step(policy: LineSearchPolicy, obj, x: np.ndarray, d: np.ndarray) -> StepResult:
    """Choose a step size along d from x.

    Returns (h, f(x + h d)); for dichotomy and armijo either the returned
    point does not increase f or h = 0 comes back flagged no-decrease.
    """
    d = np.asarray(d, dtype=float)
    if not np.isfinite(d).all() or not d.any():
        raise ValueError("direction must be finite and nonzero")
    x = np.asarray(x, dtype=float)

    if policy.kind == "unit":
        return StepResult(h=1.0, f_new=obj.value(x + d), n_evals=1)
    if policy.kind == "armijo":
        return _armijo(policy, obj, x, d)
    return _dichotomy(policy, obj, x, d)


def _armijo(policy, obj, x, d) -> StepResult:
    f0 = obj.value(x)
    slope = float(obj.gradient(x) @ d)
    evals = 2
    h = 1.0
    for _ in range(policy.max_iters):
        f_trial = obj.value(x + h * d)
        evals += 1
        if np.isfinite(f_trial) and f_trial <= f0 + policy.c1 * h * slope:
            return StepResult(h=h, f_new=f_trial, n_evals=evals)
        h *= policy.backtrack
    return StepResult(h=0.0, f_new=f0, n_evals=evals, flag=FLAG_NO_DECREASE)


def _finite_value(obj, x, d, h, evals):
    """Evaluate f(x + h d), halving h until the value is finite."""
    for _ in range(60):
        val = obj.value(x + h * d)
        evals += 1
        if np.isfinite(val):
            return h, val, evals
        h *= 0.5
    return 0.0, np.inf, evals


def _dichotomy(policy, obj, x, d) -> StepResult:
    f0 = obj.value(x)
    evals = 1
    grow = policy.bracket_growth

    h, f_h, evals = _finite_value(obj, x, d, 1.0, evals)
    if h == 0.0:
        return StepResult(h=0.0, f_new=f0, n_evals=evals, flag=FLAG_NO_DECREASE)

    best_h, best_f = (h, f_h) if f_h < f0 else (0.0, f0)

    if f_h < f0:
        # expand while still decreasing
        hi = h
        for _ in range(policy.max_iters):
            h_next = hi * grow
            f_next = obj.value(x + h_next * d)
            evals += 1
            if not np.isfinite(f_next) or f_next >= f_h:
                hi = h_next
                break
            f_h = f_next
            hi = h_next
            if f_h < best_f:
                best_h, best_f = hi, f_h
        lo = 0.0
    else:
        # shrink until a decreasing step is found
        lo, hi = 0.0, h
        found = False
        for _ in range(policy.max_iters + 22):
            h *= 0.5
            if h == 0.0:
                break
            f_h = obj.value(x + h * d)
            evals += 1
            if np.isfinite(f_h) and f_h < f0:
                found = True
                hi = 2.0 * h
                if f_h < best_f:
                    best_h, best_f = h, f_h
                break
        if not found:
            return StepResult(h=0.0, f_new=f0, n_evals=evals, flag=FLAG_NO_DECREASE)

    # bisect on the directional derivative sign
    for _ in range(policy.max_iters):
        if hi - lo <= policy.tol * (1.0 + abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        dphi = float(obj.gradient(x + mid * d) @ d)
        evals += 1
        if dphi > 0:
            hi = mid
        else:
            lo = mid

    h_final = 0.5 * (lo + hi)
    f_final = obj.value(x + h_final * d)
    evals += 1
    if f_final <= f0:
        return StepResult(h=h_final, f_new=f_final, n_evals=evals)
    if best_f < f0:
        return StepResult(h=best_h, f_new=best_f, n_evals=evals)
    return StepResult(h=0.0, f_new=f0, n_evals=evals, flag=FLAG_NO_DECREASE)
