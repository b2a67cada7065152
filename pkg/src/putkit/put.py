"""Exact asymptotic privacy-utility tradeoff.

For a fixed mechanism ``P_Z|U`` the utility is

    max I(V;W)  over Q_W|Z  s.t.  I(Z;W) <= tau C,  I(U;Z) <= L,

with ``V - U - Z - W`` and ``|W| = |Z| + 1``; :func:`put_exact` also
maximizes over the mechanism. Both problems are non-convex and are solved by
seeded multi-start penalty ascent followed by a strict feasibility filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _ascent
from ._info import logits, mi_cond, mi_joint, row_softmax, softmax_backprop, system_terms
from .capacity import capacity
from .errors import AlphabetMismatch
from .prob import (
    ConditionalDistribution,
    FiniteDistribution,
    JointDistribution,
    PutInstance,
    as_conditional,
    as_joint,
)

DEFAULT_RESTARTS = 64
FEAS_TOL = 1e-9

# Local optima whose relative constraint excess exceeds this after the last
# penalty stage are discarded; smaller excesses are pulled back exactly.
_MAX_RELATIVE_EXCESS = 1e-3


@dataclass(frozen=True)
class AuxiliarySystem:
    """A privacy mechanism ``P_Z|U`` with an auxiliary channel ``Q_W|Z`` (``|W| = |Z| + 1``)."""

    privacy_mechanism: ConditionalDistribution
    aux_channel: ConditionalDistribution

    def __post_init__(self):
        mech = as_conditional(self.privacy_mechanism)
        aux = as_conditional(self.aux_channel)
        if aux.n_in != mech.n_out:
            raise AlphabetMismatch(f"aux channel input {aux.n_in} != mechanism output {mech.n_out}")
        if aux.n_out != mech.n_out + 1:
            raise AlphabetMismatch(f"|W| must be |Z|+1 = {mech.n_out + 1}, got {aux.n_out}")
        object.__setattr__(self, "privacy_mechanism", mech)
        object.__setattr__(self, "aux_channel", aux)

    def joint(self, p_uv) -> JointDistribution:
        """``Q_UVZW = P_UV P_Z|U Q_W|Z`` as a 4-axis table."""
        p = as_joint(p_uv).table
        a = self.privacy_mechanism.matrix
        b = self.aux_channel.matrix
        return JointDistribution(np.einsum("uv,uz,zw->uvzw", p, a, b))


@dataclass(frozen=True)
class PutResult:
    value: float
    best_system: AuxiliarySystem
    i_vw: float
    i_zw: float
    i_uz: float
    feasible: bool
    solver_trace: dict = field(default_factory=dict)


class InducedDistributions(NamedTuple):
    q_v: FiniteDistribution
    q_w_given_v: ConditionalDistribution
    q_z: FiniteDistribution
    q_w_given_z: ConditionalDistribution
    q_u: FiniteDistribution
    q_z_given_u: ConditionalDistribution


def induced_distributions(system: AuxiliarySystem, p_uv) -> InducedDistributions:
    p = as_joint(p_uv)
    a = system.privacy_mechanism.matrix
    if p.shape[0] != a.shape[0]:
        raise AlphabetMismatch(f"|U| = {p.shape[0]} but mechanism input has size {a.shape[0]}")
    q_u = p.marginal(0)
    q_z = system.privacy_mechanism.output(q_u)
    # Q_W|V = P_U|V P_Z|U Q_W|Z
    p_u_given_v = p.conditional(1)
    q_w_given_v = p_u_given_v.then(system.privacy_mechanism).then(system.aux_channel)
    return InducedDistributions(p.marginal(1), q_w_given_v, q_z, system.aux_channel,
                                q_u, system.privacy_mechanism)


def system_information(system: AuxiliarySystem, p_uv) -> tuple[float, float, float]:
    """``(I(V;W), I(Z;W), I(U;Z))`` of the system under ``P_UV``."""
    i_vw, i_uz, i_zw, _ = system_terms(as_joint(p_uv).table, system.privacy_mechanism.matrix,
                                       system.aux_channel.matrix, grads=False)
    return i_vw, i_zw, i_uz


# --------------------------------------------------------------------------
# helpers


def _embed_identity(nz):
    b = np.zeros((nz, nz + 1))
    b[:, :nz] = np.eye(nz)
    return b


def _independent_aux(nz):
    b = np.zeros((nz, nz + 1))
    b[:, 0] = 1.0
    return b


def pull_back(p_in, m, budget, max_excess):
    """Mix the rows of ``m`` toward their output marginal until ``I(p_in, m) <= budget``.

    The output marginal is unchanged along the mixing segment and the
    information is convex along it with value 0 at the far end, so bisection
    on the mixing weight is exact. Returns ``None`` when the initial excess
    exceeds ``max_excess``.
    """
    val = mi_cond(p_in, m)
    if val <= budget:
        return m
    if val - budget > max_excess:
        return None
    marg = p_in @ m
    lo, hi = 0.0, 1.0
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if mi_cond(p_in, (1.0 - mid) * m + mid * marg[None, :]) <= budget:
            hi = mid
        else:
            lo = mid
    return (1.0 - hi) * m + hi * marg[None, :]


def _objective(p_uv, nz, nw, leak, rate, scale, mu, a_fixed=None, lam_zw=0.0):
    """Penalized objective on logits: ``(I(V;W) - lam_zw I(Z;W)) / scale`` minus penalties.

    ``leak``/``rate`` of ``None`` mean the constraint is absent. With
    ``a_fixed`` the parameter vector holds only the aux-channel logits.
    """
    nu = p_uv.shape[0]
    n_a = 0 if a_fixed is not None else nu * nz

    def fun(x):
        if a_fixed is None:
            a = row_softmax(x[:n_a].reshape(nu, nz))
        else:
            a = a_fixed
        b = row_softmax(x[n_a:].reshape(nz, nw))
        i_vw, i_uz, i_zw, g = system_terms(p_uv, a, b)
        val = (i_vw - lam_zw * i_zw) / scale
        ga = (g["vw"][0] - lam_zw * g["zw"][0]) / scale
        gb = (g["vw"][1] - lam_zw * g["zw"][1]) / scale
        if leak is not None:
            pen, slope = _ascent.penalty(i_uz, leak, mu)
            if pen:
                val -= pen
                ga = ga - slope * g["uz"][0]
        if rate is not None:
            pen, slope = _ascent.penalty(i_zw, rate, mu)
            if pen:
                val -= pen
                ga = ga - slope * g["zw"][0]
                gb = gb - slope * g["zw"][1]
        gx = softmax_backprop(b, gb).ravel()
        if a_fixed is None:
            gx = np.concatenate([softmax_backprop(a, ga).ravel(), gx])
        return val, gx

    return fun


def _ascend(p_uv, a0, b0, leak, rate, scale, free_a):
    """Penalty schedule from ``(a0, b0)``; returns the final matrices and iteration count."""
    nz, nw = b0.shape
    x = logits(b0).ravel()
    if free_a:
        x = np.concatenate([logits(a0).ravel(), x])
    a_fixed = None if free_a else a0
    constrained = leak is not None or rate is not None
    schedule = _ascent.PENALTY_SCHEDULE if constrained else (0.0,)
    nit = 0
    for mu in schedule:
        x, it = _ascent.maximize(_objective(p_uv, nz, nw, leak, rate, scale, mu, a_fixed), x)
        nit += it
    n_a = p_uv.shape[0] * nz if free_a else 0
    a = row_softmax(x[:n_a].reshape(-1, nz)) if free_a else a0
    b = row_softmax(x[n_a:].reshape(nz, nw))
    return a, b, nit


def _make_feasible(p_uv, a, b, leak, rate):
    """Exact feasibility restoration for a slightly infeasible local optimum, or ``None``."""
    p_u = p_uv.sum(1)
    if leak is not None:
        a = pull_back(p_u, a, leak, _MAX_RELATIVE_EXCESS * leak)
        if a is None:
            return None
    if rate is not None:
        b = pull_back(p_u @ a, b, rate, _MAX_RELATIVE_EXCESS * rate)
        if b is None:
            return None
    return a, b


def _result(p_uv, a, b, feasible=True, trace=None):
    i_vw, i_uz, i_zw, _ = system_terms(p_uv, a, b, grads=False)
    system = AuxiliarySystem(ConditionalDistribution(a), ConditionalDistribution(b))
    value = i_vw if feasible else 0.0
    return PutResult(value, system, i_vw, i_zw, i_uz, feasible, dict(trace or {}))


def _agreeing(values, best):
    return int(sum(abs(v - best) <= 1e-4 * abs(best) + 1e-12 for v in values))


def _search(p_uv, starts, leak, rate, free_a):
    """Run every start, restore feasibility, and reduce deterministically."""
    scale = min(v for v in (leak, rate, mi_joint(p_uv)) if v is not None)
    scale = max(scale, 1e-12)

    def one(start):
        a, b, nit = _ascend(p_uv, start[0], start[1], leak, rate, scale, free_a)
        fixed = _make_feasible(p_uv, a, b, leak, rate)
        if fixed is None:
            return None, nit
        a, b = fixed
        i_vw, _, _, _ = system_terms(p_uv, a, b, grads=False)
        return _ascent.Candidate(i_vw, (a, b)), nit

    outcomes = _ascent.run_all(one, starts)
    cands = [c for c, _ in outcomes if c is not None]
    nit = sum(n for _, n in outcomes)
    return cands, nit


# --------------------------------------------------------------------------
# public solvers


def inner_put(p_uv, p_z_given_u, rate_budget: float, leak_budget: float,
              restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> PutResult:
    """Best auxiliary channel for a fixed mechanism.

    Returns ``feasible=False`` and value 0 when the mechanism alone leaks more
    than ``leak_budget``.
    """
    p = as_joint(p_uv).table
    a = as_conditional(p_z_given_u).matrix
    if a.shape[0] != p.shape[0]:
        raise AlphabetMismatch(f"|U| = {p.shape[0]} but mechanism input has size {a.shape[0]}")
    nz = a.shape[1]
    p_u = p.sum(1)
    rate = float(rate_budget)
    trace = dict(restarts=0, rate_budget=rate, leak_budget=float(leak_budget))

    if mi_cond(p_u, a) > leak_budget + FEAS_TOL:
        return _result(p, a, _independent_aux(nz), feasible=False, trace=trace)
    if rate <= 0:
        return _result(p, a, _independent_aux(nz), trace=trace)
    identity = _embed_identity(nz)
    if mi_cond(p_u @ a, identity) <= rate:
        # W = Z attains the data-processing maximum I(V;Z)
        return _result(p, a, identity, trace=dict(trace, shortcut="identity"))

    rng = np.random.default_rng(seed)
    starts = [(a, _ascent.dirichlet_rows(rng, nz, nz + 1)) for _ in range(restarts)]
    cands, nit = _search(p, starts, None, rate, free_a=False)
    cands.append(_ascent.Candidate(0.0, (a, _independent_aux(nz))))
    best = _ascent.select_best(cands)
    trace.update(restarts=restarts, feasible_restarts=len(cands) - 1, iterations=nit,
                 restarts_agreeing=_agreeing([c.value for c in cands[:-1]], best.value))
    return _result(p, *best.mats, trace=trace)


def put_exact(instance: PutInstance, restarts: int = DEFAULT_RESTARTS, seed: int = 0,
              warm_start: AuxiliarySystem | None = None) -> PutResult:
    """Maximize the tradeoff jointly over the mechanism and the auxiliary channel.

    ``warm_start`` (e.g. the optimum at a smaller leakage budget) is used both
    as an extra starting point and, when feasible, as a candidate itself.
    """
    p = instance.p_uv.table
    nu = p.shape[0]
    nz = instance.z_size
    cap = capacity(instance.channel, tol=1e-9)
    rate = instance.tau * cap.capacity
    leak = instance.leak
    p_u = p.sum(1)
    trace = dict(restarts=0, capacity=cap.capacity, rate_budget=rate, leak_budget=leak)

    trivial = (np.tile(np.full(nz, 1.0 / nz), (nu, 1)), _independent_aux(nz))
    if leak <= 0 or rate <= 0 or mi_joint(p) <= 0:
        return _result(p, *trivial, trace=dict(trace, restarts_agreeing=0))

    rng = np.random.default_rng(seed)
    starts = [(_ascent.dirichlet_rows(rng, nu, nz), _ascent.dirichlet_rows(rng, nz, nz + 1))
              for _ in range(restarts)]
    extra = [_ascent.Candidate(0.0, trivial)]
    if warm_start is not None:
        wa = warm_start.privacy_mechanism.matrix
        wb = warm_start.aux_channel.matrix
        starts.insert(0, (wa, wb))
        i_vw, i_uz, i_zw, _ = system_terms(p, wa, wb, grads=False)
        if i_uz <= leak and i_zw <= rate:
            extra.append(_ascent.Candidate(i_vw, (wa, wb)))

    cands, nit = _search(p, starts, leak, rate, free_a=True)
    best = _ascent.select_best(cands + extra)
    trace.update(restarts=len(starts), feasible_restarts=len(cands), iterations=nit,
                 restarts_agreeing=_agreeing([c.value for c in cands], best.value))
    return _result(p, *best.mats, trace=trace)


def put_curve(instance: PutInstance, leak_grid, restarts: int = DEFAULT_RESTARTS,
              seed: int = 0) -> list[tuple[float, PutResult]]:
    """Tradeoff at each leakage budget of an ascending grid, warm-starting along the way.

    The previous optimum stays feasible at the next (larger) budget, so the
    returned values are nondecreasing.
    """
    grid = [float(x) for x in leak_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("leak_grid must be sorted ascending")
    out = []
    prev = None
    for leak in grid:
        if prev is not None and leak == out[-1][0]:
            out.append((leak, prev))
            continue
        res = put_exact(instance.replace(leak=leak), restarts=restarts, seed=seed,
                        warm_start=prev.best_system if prev is not None else None)
        out.append((leak, res))
        prev = res
    return out
