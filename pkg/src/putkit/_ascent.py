"""Multi-start local ascent shared by the exact, dual and Euclidean solvers.

Local steps are L-BFGS-B on unconstrained logits (row softmax keeps every
iterate strictly inside the simplex). Inequality constraints are handled
outside this module by an exterior quadratic penalty whose weight follows
``PENALTY_SCHEDULE``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

PENALTY_SCHEDULE = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
STALL_TOL = 1e-10
STALL_WINDOW = 50
MAX_ITER = 100_000
TIE_TOL = 1e-12


def maximize(fun, x0, max_iter=MAX_ITER, stall_tol=STALL_TOL, stall_window=STALL_WINDOW):
    """Maximize ``fun(x) -> (value, grad)`` from ``x0``.

    Stops when the objective gains less than ``stall_tol`` (relative to
    ``max(1, |value|)``) over ``stall_window`` iterations, or at L-BFGS-B's own
    convergence, or after ``max_iter`` iterations. Returns ``(x, iterations)``.
    """
    history = []

    def neg(x):
        v, g = fun(x)
        return -v, -g

    def stall(intermediate_result):
        history.append(-intermediate_result.fun)
        if len(history) > stall_window:
            gain = history[-1] - history[-1 - stall_window]
            if gain < stall_tol * max(1.0, abs(history[-1])):
                raise StopIteration

    res = minimize(neg, np.asarray(x0, dtype=float), jac=True, method="L-BFGS-B",
                   callback=stall,
                   options=dict(maxiter=max_iter, maxfun=10 * max_iter,
                                ftol=1e-15, gtol=1e-11))
    return res.x, int(res.nit)


@dataclass
class Candidate:
    """One local optimum: objective value plus the matrices that attain it."""

    value: float
    mats: tuple
    info: dict = field(default_factory=dict)

    def key(self):
        return np.concatenate([np.ravel(m) for m in self.mats])


def select_best(candidates, tie_tol=TIE_TOL):
    """Deterministic reduction: highest value; ties go to the lexicographically smallest matrices.

    The result does not depend on the order in which candidates arrive.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    top = max(c.value for c in candidates)
    tied = [c for c in candidates if c.value >= top - tie_tol]
    return min(tied, key=lambda c: tuple(c.key()))


def n_workers():
    """Worker cap from ``PUTKIT_THREADS`` (default 1: restarts run inline)."""
    try:
        return max(1, int(os.environ.get("PUTKIT_THREADS", "1")))
    except ValueError:
        return 1


def run_all(fn, items):
    """``[fn(i) for i in items]``, threaded when ``PUTKIT_THREADS`` > 1; order is preserved."""
    items = list(items)
    workers = min(n_workers(), len(items))
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def dirichlet_rows(rng, n_rows, n_cols):
    return rng.dirichlet(np.ones(n_cols), size=n_rows)


def penalty(value, budget, mu):
    """Normalized exterior penalty ``mu * ((value - budget)_+ / budget)^2`` and its slope."""
    excess = value - budget
    if excess <= 0:
        return 0.0, 0.0
    r = excess / budget
    return mu * r * r, 2.0 * mu * r / budget
