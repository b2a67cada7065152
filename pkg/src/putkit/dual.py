"""Lagrangian dual of the tradeoff and its KL-perturbed version.

For a fixed mechanism the dual function is

    g(l1, l2) = l1 tau C + l2 (L - I(U;Z)) + S(l1),
    S(l1)     = max over Q_W|Z of I(V;W) - l1 I(Z;W),

which is convex in ``(l1, l2)`` and affine in ``l2``. The perturbed value
``g_gamma`` drops the Markov and marginal constraints on the joint tensors
and charges their violation through KL penalties scaled by ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax, xlogy

from . import _ascent
from ._info import TINY, logits, mi_cond, row_softmax, system_terms
from .capacity import capacity
from .errors import AlphabetMismatch
from .prob import ConditionalDistribution, JointDistribution, as_conditional, as_joint
from .put import AuxiliarySystem, _embed_identity, _independent_aux, _objective

DEFAULT_RESTARTS = 64
GAMMA_RESTARTS = 128
LAMBDA_GRID = (0.0,) + tuple(np.logspace(-3, 3, 25))
GOLDEN_TOL = 1e-4


@dataclass(frozen=True)
class DualPoint:
    lambda1: float
    lambda2: float
    value: float
    maximizer: AuxiliarySystem


@dataclass(frozen=True)
class DualGammaPoint:
    lambda1: float
    lambda2: float
    gamma: float
    value: float
    maximizer: tuple  # (Q_UVZW, Q_XY) as JointDistribution
    delta_value: float


def _check_lambdas(*lams):
    for lam in lams:
        if not (lam >= 0 and math.isfinite(lam)):
            raise ValueError(f"multipliers must be finite and nonnegative, got {lam}")


def _inputs(p_uv, p_z_given_u):
    p = as_joint(p_uv).table
    a = as_conditional(p_z_given_u).matrix
    if a.shape[0] != p.shape[0]:
        raise AlphabetMismatch(f"|U| = {p.shape[0]} but mechanism input has size {a.shape[0]}")
    return p, a


def penalized_sup(p_uv, a, lam1, restarts=DEFAULT_RESTARTS, seed=0, extra_starts=()):
    """``max over Q_W|Z of I(V;W) - lam1 I(Z;W)`` by multi-start ascent.

    Returns ``(value, Q_W|Z)``. Zero is always attainable (W independent of
    Z), and for ``lam1 >= 1`` it is optimal since ``I(V;W) <= I(Z;W)``.
    """
    nz = a.shape[1]

    def value_of(b):
        i_vw, _, i_zw, _ = system_terms(p_uv, a, b, grads=False)
        return i_vw - lam1 * i_zw

    cands = [_ascent.Candidate(0.0, (_independent_aux(nz),))]
    if lam1 >= 1.0:
        return 0.0, cands[0].mats[0]
    ident = _embed_identity(nz)
    cands.append(_ascent.Candidate(value_of(ident), (ident,)))

    rng = np.random.default_rng(seed)
    starts = list(extra_starts) + [_ascent.dirichlet_rows(rng, nz, nz + 1) for _ in range(restarts)]
    fun = _objective(p_uv, nz, nz + 1, None, None, 1.0, 0.0, a_fixed=a, lam_zw=lam1)

    def one(b0):
        x, _ = _ascent.maximize(fun, logits(b0).ravel())
        b = row_softmax(x.reshape(nz, nz + 1))
        return _ascent.Candidate(value_of(b), (b,))

    cands += _ascent.run_all(one, starts)
    best = _ascent.select_best(cands)
    return best.value, best.mats[0]


def _g_value(lam1, lam2, rate, leak, i_uz, sup):
    return lam1 * rate + lam2 * (leak - i_uz) + sup


def dual_g(lambda1, lambda2, p_uv, p_z_given_u, channel, tau, leak,
           restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> DualPoint:
    """Dual function at ``(lambda1, lambda2)`` for a fixed mechanism."""
    _check_lambdas(lambda1, lambda2)
    p, a = _inputs(p_uv, p_z_given_u)
    cap = capacity(channel, tol=1e-9).capacity
    sup, b = penalized_sup(p, a, lambda1, restarts, seed)
    value = _g_value(lambda1, lambda2, tau * cap, leak, mi_cond(p.sum(1), a), sup)
    return DualPoint(float(lambda1), float(lambda2), value,
                     AuxiliarySystem(ConditionalDistribution(a), ConditionalDistribution(b)))


def _golden(fun, lo, hi, tol):
    """Minimize a convex function of one variable on ``[lo, hi]`` down to bracket width ``tol``."""
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - inv * (hi - lo)
    d = lo + inv * (hi - lo)
    fc, fd = fun(c), fun(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - inv * (hi - lo)
            fc = fun(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + inv * (hi - lo)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def dual_minimize(p_uv, p_z_given_u, channel, tau, leak, restarts: int = 16,
                  seed: int = 0) -> tuple[float, float, float]:
    """Minimize the dual function over ``lambda1, lambda2 >= 0``.

    ``g`` is affine in ``lambda2`` with slope ``L - I(U;Z)``, so the
    ``lambda2`` coordinate is exact: 0 when the mechanism meets the leakage
    budget, and the dual is unbounded below (returned as
    ``(lambda1, inf, -inf)``) when it does not. ``lambda1`` is searched on a
    log grid and refined by golden section. Each evaluation of the inner
    supremum is warm-started from the best channels found so far.

    Returns ``(lambda1*, lambda2*, value)``.
    """
    p, a = _inputs(p_uv, p_z_given_u)
    rate = tau * capacity(channel, tol=1e-9).capacity
    i_uz = mi_cond(p.sum(1), a)
    slope = leak - i_uz
    cache = {}
    found = []

    def g1(lam1):
        if lam1 not in cache:
            sup, b = penalized_sup(p, a, lam1, restarts, seed, extra_starts=found[-4:])
            found.append(b)
            cache[lam1] = lam1 * rate + sup
        return cache[lam1]

    if slope < -1e-12:
        lam1 = min(LAMBDA_GRID, key=g1)
        return float(lam1), math.inf, -math.inf

    grid = list(LAMBDA_GRID)
    vals = [g1(x) for x in grid]
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    lam1, val = _golden(g1, lo, hi, GOLDEN_TOL)
    if vals[i] < val:
        lam1, val = grid[i], vals[i]
    return float(lam1), 0.0, float(val)


# --------------------------------------------------------------------------
# perturbed dual


def _kl(p, q):
    return float(xlogy(p, p).sum() - xlogy(p, np.maximum(q, TINY)).sum())


def _mi(j):
    a, b = j.sum(1), j.sum(0)
    return max(float(xlogy(j, j).sum() - xlogy(a, a).sum() - xlogy(b, b).sum()), 0.0)


class _GammaProblem:
    """Objective pieces of the perturbed dual on flattened masked tensors."""

    def __init__(self, p, a, w, tau, leak, lam1, lam2, gamma):
        self.shape = p.shape + (a.shape[1], a.shape[1] + 1)
        self.tau, self.leak = tau, leak
        self.lam1, self.lam2, self.gamma = lam1, lam2, gamma
        p_u = p.sum(1)
        self.p_z = p_u @ a
        with np.errstate(invalid="ignore", divide="ignore"):
            p_u_given_z = np.where(self.p_z[None, :] > 0, p_u[:, None] * a / self.p_z[None, :], 0.0)
            p_v_given_u = np.where(p_u[:, None] > 0, p / p_u[:, None], 0.0)
        ref = np.einsum("uz,uv->uvz", p_u_given_z, p_v_given_u)
        self.ref = np.broadcast_to(ref[..., None], self.shape)
        self.mask = self.ref > 0
        self.w = w
        self.w_mask = w > 0

    # UVZW part
    def uvzw_terms(self, q):
        q_vw = q.sum((0, 2))
        q_zw = q.sum((0, 1))
        q_uz = q.sum((1, 3))
        q_z = q_zw.sum(1)
        r = _mi(q_vw) - self.lam1 * _mi(q_zw) - self.lam2 * (_mi(q_uz) - self.leak)
        cond = q / np.maximum(q_zw[None, None], TINY)
        d = _kl(q_z, self.p_z) + float((q * (np.log(np.maximum(cond, TINY)) - np.log(np.maximum(self.ref, TINY)))).sum())
        return r, self.gamma * max(d, 0.0)

    def uvzw_fun(self, x):
        q = np.zeros(self.shape)
        q[self.mask] = softmax(x)
        q_v = q.sum((0, 2, 3))
        q_w = q.sum((0, 1, 2))
        q_z = q.sum((0, 1, 3))
        q_u = q.sum((1, 2, 3))
        q_vw = q.sum((0, 2))
        q_zw = q.sum((0, 1))
        q_uz = q.sum((1, 3))
        r, delta = self.uvzw_terms(q)
        lr = lambda num, den: np.log(np.maximum(num, TINY)) - np.log(np.maximum(den, TINY))
        g = (lr(q_vw, np.outer(q_v, q_w))[None, :, None, :]
             - self.lam1 * lr(q_zw, np.outer(q_z, q_w))[None, None]
             - self.lam2 * lr(q_uz, np.outer(q_u, q_z))[:, None, :, None]
             - self.gamma * lr(q_z, self.p_z)[None, None, :, None]
             - self.gamma * (lr(q, q_zw[None, None]) - np.log(np.maximum(self.ref, TINY))))
        pm = q[self.mask]
        gm = g[self.mask]
        return r - delta, pm * (gm - (pm * gm).sum())

    # XY part
    def xy_terms(self, q):
        q_x = q.sum(1)
        ref = q_x[:, None] * self.w
        return self.tau * self.lam1 * _mi(q), self.tau * self.gamma * max(_kl(q, ref), 0.0)

    def xy_fun(self, x):
        q = np.zeros(self.w.shape)
        q[self.w_mask] = softmax(x)
        r, delta = self.xy_terms(q)
        q_x, q_y = q.sum(1), q.sum(0)
        lq = np.log(np.maximum(q, TINY))
        g = self.tau * (self.lam1 * (lq - np.log(np.maximum(np.outer(q_x, q_y), TINY)))
                        - self.gamma * (lq - np.log(np.maximum(q_x[:, None] * self.w, TINY))))
        pm = q[self.w_mask]
        gm = g[self.w_mask]
        return r - delta, pm * (gm - (pm * gm).sum())


def _best_tensor(fun, terms, mask, starts, exact_starts):
    """Multi-start ascent over a masked tensor; exact starts are also candidates as given."""
    cands = []
    for q in exact_starts:
        r, d = terms(q)
        cands.append(_ascent.Candidate(r - d, (q,)))

    def one(q0):
        x, _ = _ascent.maximize(fun, logits(q0[mask]))
        q = np.zeros(mask.shape)
        q[mask] = softmax(x)
        r, d = terms(q)
        return _ascent.Candidate(r - d, (q,))

    cands += _ascent.run_all(one, starts)
    return _ascent.select_best(cands)


def dual_g_gamma(lambda1, lambda2, gamma, p_uv, p_z_given_u, channel, tau, leak,
                 restarts: int = GAMMA_RESTARTS, seed: int = 0,
                 warm_start: DualPoint | None = None) -> DualGammaPoint:
    """Perturbed dual value at ``(lambda1, lambda2, gamma)``.

    The objective separates into a part on ``Q_UVZW`` and a part on
    ``Q_XY``, which are maximized independently. Both searches include the
    constrained maximizer of :func:`dual_g` (where every penalty vanishes),
    so the returned value is never below the unperturbed dual.
    """
    _check_lambdas(lambda1, lambda2)
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    p, a = _inputs(p_uv, p_z_given_u)
    w = as_conditional(channel).matrix
    prob = _GammaProblem(p, a, w, float(tau), float(leak), float(lambda1), float(lambda2), float(gamma))

    if warm_start is None:
        warm_start = dual_g(lambda1, lambda2, p, a, channel, tau, leak, seed=seed)
    b = warm_start.maximizer.aux_channel.matrix
    q_warm = np.einsum("uv,uz,zw->uvzw", p, a, b)
    cap = capacity(channel, tol=1e-9)
    xy_warm = cap.optimal_input.probs[:, None] * w

    rng = np.random.default_rng(seed)
    n1 = int(prob.mask.sum())
    n2 = int(prob.w_mask.sum())
    starts1 = [q_warm]
    starts2 = [xy_warm]
    for _ in range(restarts):
        q = np.zeros(prob.shape)
        q[prob.mask] = rng.dirichlet(np.ones(n1))
        starts1.append(q)
        q = np.zeros(w.shape)
        q[prob.w_mask] = rng.dirichlet(np.ones(n2))
        starts2.append(q)

    best1 = _best_tensor(prob.uvzw_fun, prob.uvzw_terms, prob.mask, starts1, [q_warm])
    best2 = _best_tensor(prob.xy_fun, prob.xy_terms, prob.w_mask, starts2, [xy_warm])
    q1, q2 = best1.mats[0], best2.mats[0]
    d1 = prob.uvzw_terms(q1)[1]
    d2 = prob.xy_terms(q2)[1]
    return DualGammaPoint(float(lambda1), float(lambda2), float(gamma), best1.value + best2.value,
                          (JointDistribution(q1), JointDistribution(q2)), d1 + d2)
