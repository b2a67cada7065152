"""Brute-force reference values for small alphabets.

The mechanism ``P_Z|U`` ranges over an exhaustive simplex grid. For each
mechanism the auxiliary-channel problem is rewritten over posteriors: a
channel ``Q_W|Z`` is the same thing as weights ``q_w`` on posteriors
``t_w = Q_Z|W=w`` averaging to ``P_Z``, and

    I(V;W) = H(V) - sum_w q_w H(P_V|Z^T t_w),   I(Z;W) = H(Z) - sum_w q_w H(t_w).

With the posteriors restricted to a grid (plus ``P_Z`` itself, which keeps
every instance feasible) the inner problem is a linear program in ``q``,
solved exactly. A basic optimal solution has at most ``|Z| + 1`` nonzero
weights, which is the ``|W|`` used everywhere else. Every grid value is
attained by an explicit system, so the oracle never overshoots the optimum.
"""

from __future__ import annotations

import itertools
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ._info import ent
from .capacity import capacity
from .errors import AlphabetMismatch, GridTooLarge, NoConvergence
from .prob import ConditionalDistribution, PutInstance, as_conditional, as_joint
from .put import AuxiliarySystem, PutResult, system_information

MAX_GRID_POINTS = 10**8
_BATCH = 500


def simplex_grid(n_symbols: int, denom: int) -> np.ndarray:
    """All distributions on ``n_symbols`` points with entries in ``{0, 1/denom, ..., 1}``."""
    rows = []
    for bars in itertools.combinations(range(denom + n_symbols - 1), n_symbols - 1):
        edges = (-1,) + bars + (denom + n_symbols - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(n_symbols)])
    return np.array(rows, dtype=float) / denom


def _denominator(grid_step):
    n = round(1.0 / grid_step)
    if n < 1 or abs(n * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step must be 1/n for a positive integer n, got {grid_step}")
    return n


def _posterior_lp(p_uv, mechs, post, rate=None, lam=0.0, want_weights=False):
    """Solve the posterior LP for a batch of mechanisms.

    Maximizes ``I(V;W) - lam * I(Z;W)`` subject to ``I(Z;W) <= rate`` (when
    given). Returns the values and, if requested, per-mechanism
    ``(weights, posteriors)``.
    """
    p_u = p_uv.sum(1)
    h_v = ent(p_uv.sum(0))
    k = len(mechs)
    pz = np.einsum("u,kuz->kz", p_u, mechs)
    pvz = np.einsum("uv,kuz->kvz", p_uv, mechs)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_v_given_z = np.where(pz[:, None, :] > 0, pvz / pz[:, None, :], 1.0 / p_uv.shape[1])
    # every block gets the shared grid plus its own P_Z
    posts = np.concatenate([np.broadcast_to(post, (k,) + post.shape), pz[:, None, :]], axis=1)
    h_t = ent(posts, axis=-1)
    h_pv = ent(np.einsum("kiz,kvz->kiv", posts, p_v_given_z), axis=-1)
    phi = lam * h_t - h_pv
    h_z = ent(pz, axis=-1)

    n = posts.shape[1]
    a_eq = sp.block_diag([sp.csr_matrix(posts[i].T) for i in range(k)], format="csr")
    kw = {}
    if rate is not None:
        kw = dict(A_ub=sp.block_diag([sp.csr_matrix(-h_t[i][None, :]) for i in range(k)], format="csr"),
                  b_ub=-(h_z - rate))
    res = linprog(-phi.ravel(), A_eq=a_eq, b_eq=pz.ravel(), bounds=(0, None),
                  method="highs-ds" if want_weights else "highs", **kw)
    if res.status != 0:
        raise NoConvergence(f"posterior LP failed: {res.message}", None)
    q = res.x.reshape(k, n)
    values = h_v - lam * h_z + (q * phi).sum(1)
    if want_weights:
        return values, [(q[i], posts[i]) for i in range(k)]
    return values


def _aux_from_posteriors(weights, posts, pz):
    """``Q_W|Z(w|z) = q_w t_w(z) / P_Z(z)`` padded to ``|Z| + 1`` outputs."""
    nz = len(pz)
    keep = np.flatnonzero(weights > 1e-15)
    # merge duplicate posteriors so the support fits the |W| = |Z| + 1 alphabet
    merged = {}
    for i in keep:
        key = tuple(np.round(posts[i], 12))
        w, t = merged.get(key, (0.0, posts[i]))
        merged[key] = (w + weights[i], t)
    items = sorted(merged.values(), key=lambda wt: tuple(wt[1]))
    if len(items) > nz + 1:
        raise NoConvergence(f"posterior LP returned {len(items)} support points", None)
    b = np.zeros((nz, nz + 1))
    for j, (w, t) in enumerate(items):
        b[:, j] = w * t
    live = pz > 0
    b[live] /= pz[live, None]
    b[~live] = 0.0
    b[~live, 0] = 1.0
    b /= b.sum(1, keepdims=True)
    return b


def _solve_single(p_uv, mech, post, rate=None, lam=0.0):
    vals, [(q, posts)] = _posterior_lp(p_uv, mech[None], post, rate, lam, want_weights=True)
    pz = p_uv.sum(1) @ mech
    return float(vals[0]), _aux_from_posteriors(q, posts, pz)


def _check_size(n_mech, n_post):
    total = n_mech * n_post
    if total > MAX_GRID_POINTS:
        raise GridTooLarge(f"grid has {total:.3g} points (> {MAX_GRID_POINTS:.0e})")


def grid_oracle_inner(p_uv, p_z_given_u, rate_budget: float,
                      grid_step: float) -> PutResult:
    """Best auxiliary channel for a fixed mechanism over a posterior grid."""
    p = as_joint(p_uv).table
    a = as_conditional(p_z_given_u).matrix
    if a.shape[0] != p.shape[0]:
        raise AlphabetMismatch(f"|U| = {p.shape[0]} but mechanism input has size {a.shape[0]}")
    n = _denominator(grid_step)
    post = simplex_grid(a.shape[1], n)
    _check_size(1, len(post))
    value, b = _solve_single(p, a, post, rate_budget)
    system = AuxiliarySystem(ConditionalDistribution(a), ConditionalDistribution(b))
    i_vw, i_zw, i_uz = system_information(system, p)
    return PutResult(max(value, 0.0), system, i_vw, i_zw, i_uz, True,
                     dict(grid_step=grid_step, posterior_points=len(post) + 1))


def _canonical_mask(mechs):
    """Keep one representative per relabeling of Z (the lexicographically smallest)."""
    k, nu, nz = mechs.shape
    flat = mechs.reshape(k, -1)
    keep = np.ones(k, dtype=bool)
    for perm in itertools.permutations(range(nz)):
        if perm == tuple(range(nz)):
            continue
        other = mechs[:, :, perm].reshape(k, -1)
        diff = other != flat
        first = diff.argmax(1)
        smaller = diff.any(1) & (other[np.arange(k), first] < flat[np.arange(k), first])
        keep &= ~smaller
    return keep


def grid_oracle(instance: PutInstance, grid_step: float) -> PutResult:
    """Exhaustive maximization over a mechanism grid and a posterior grid, both of step ``grid_step``."""
    p = instance.p_uv.table
    nu, nz = p.shape[0], instance.z_size
    n = _denominator(grid_step)
    n_rows = comb(n + nz - 1, nz - 1)
    n_post = n_rows + 1
    _check_size(n_rows ** nu, n_post)

    cap = capacity(instance.channel, tol=1e-9).capacity
    rate = instance.tau * cap
    leak = instance.leak
    p_u = p.sum(1)
    trace = dict(grid_step=grid_step, capacity=cap, rate_budget=rate)

    rows = simplex_grid(nz, n)
    idx = np.stack(np.meshgrid(*[np.arange(n_rows)] * nu, indexing="ij"), -1).reshape(-1, nu)
    mechs = rows[idx]
    h_z = ent(np.einsum("u,kuz->kz", p_u, mechs), axis=-1)
    i_uz = np.maximum(h_z - np.einsum("u,ku->k", p_u, ent(mechs, axis=-1)), 0.0)
    mechs = mechs[(i_uz <= leak + 1e-12) & _canonical_mask(mechs)]
    trace["mechanisms"] = len(mechs)

    post = simplex_grid(nz, n)
    values = np.concatenate([_posterior_lp(p, mechs[i:i + _BATCH], post, rate)
                             for i in range(0, len(mechs), _BATCH)])
    top = values.max()
    # deterministic choice among near-ties: the first in grid (lexicographic) order
    best = int(np.flatnonzero(values >= top - 1e-12)[0])
    a = mechs[best]
    value, b = _solve_single(p, a, post, rate)
    system = AuxiliarySystem(ConditionalDistribution(a), ConditionalDistribution(b))
    i_vw, i_zw, i_uz_best = system_information(system, p)
    return PutResult(max(value, 0.0), system, i_vw, i_zw, i_uz_best, True, trace)


def grid_dual_sup(p_uv, p_z_given_u, lam: float, grid_step: float) -> float:
    """``max over Q_W|Z of I(V;W) - lam I(Z;W)`` over the posterior grid."""
    p = as_joint(p_uv).table
    a = as_conditional(p_z_given_u).matrix
    post = simplex_grid(a.shape[1], _denominator(grid_step))
    _check_size(1, len(post))
    return _solve_single(p, a, post, None, lam)[0]
