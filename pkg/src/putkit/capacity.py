"""Channel capacity by Blahut-Arimoto with a certified duality gap."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._info import mi_cond
from .errors import NoConvergence
from .prob import ConditionalDistribution, FiniteDistribution, as_conditional

_FLOOR = 1e-300
_MAX_STEP = 1e8


@dataclass(frozen=True)
class CapacityResult:
    capacity: float
    optimal_input: FiniteDistribution
    iterations: int
    gap: float


def _divergences(w, r):
    """D(W(.|x) || r W) for every input symbol x."""
    q = r @ w
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * (np.log(w) - np.log(np.maximum(q, _FLOOR))), 0.0)
    return terms.sum(axis=1)


def _update(r, d, step):
    r = r * np.exp(step * (d - d.max()))
    r = np.maximum(r / r.sum(), _FLOOR)
    return r / r.sum()


def capacity(channel, tol: float = 1e-9, max_iter: int = 100_000) -> CapacityResult:
    """Capacity of ``channel`` in nats.

    Each iterate ``r`` brackets the capacity between ``I(r, W)`` and
    ``max_x D(W_x || r W)``; iteration stops once that bracket is at most
    ``tol`` wide, and the lower end is reported. Plain updates converge
    slowly on nearly useless channels, so each step also tries an
    over-relaxed update and keeps it when it raises the lower end further.

    Raises
    ------
    NoConvergence
        If the bracket is still wider than ``tol`` after ``max_iter``
        updates. The partial :class:`CapacityResult` is attached.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    w = as_conditional(channel).matrix
    n = w.shape[0]
    r = np.full(n, 1.0 / n)
    it = 0
    step = 1.0
    while True:
        d = _divergences(w, r)
        lower = mi_cond(r, w)
        gap = max(float(d.max()) - lower, 0.0)
        if gap <= tol or it >= max_iter:
            break
        # plain update, plus an over-relaxed one kept only if it does better
        plain = _update(r, d, 1.0)
        r = plain
        if step > 1.0:
            fast = _update(r, d, step)
            if mi_cond(fast, w) > mi_cond(plain, w):
                r = fast
                step = min(2.0 * step, _MAX_STEP)
            else:
                step = max(0.5 * step, 1.0)
        else:
            step = 2.0
        it += 1

    # floored entries are below any reportable precision
    r = np.where(r <= 1e3 * _FLOOR, 0.0, r)
    r /= r.sum()
    result = CapacityResult(lower, FiniteDistribution(r), it, gap)
    if gap > tol:
        raise NoConvergence(f"capacity gap {gap:.3g} > tol {tol:.3g} after {it} iterations", result)
    return result


def bsc_capacity(crossover: float) -> float:
    """Closed form ``log 2 - h(crossover)`` in nats."""
    e = float(crossover)
    h = -sum(x * math.log(x) for x in (e, 1.0 - e) if x > 0)
    return math.log(2.0) - h


def capacity_of(channel: ConditionalDistribution, tol: float = 1e-9) -> float:
    return capacity(channel, tol=tol).capacity
