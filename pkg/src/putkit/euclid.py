"""Quadratic approximations of the tradeoff in the high-privacy regime.

With leakage ``L = rho^2 / 2`` the mechanism is written as
``P_Z|U(z|u) = Q_Z(z) + rho J(u, z)``, where ``J`` has zero row sums and
zero ``P_U``-weighted column sums, and the leakage constraint becomes the
chi-square ellipsoid ``sum P_U J^2 / Q_Z <= 1``. At fixed ``(Q_Z, P_W|Z)``
the utility is a positive semidefinite quadratic form in ``J``, so the
inner problem is a generalized eigenproblem on the constraint subspace.

For an extremely noisy channel (``tau C = rho^2 / 2``) the auxiliary
channel is perturbed the same way, ``P_W|Z(w|z) = Q_W(w) + rho Theta(z, w)``,
and the objective is maximized by alternating the two eigen-steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, null_space
from scipy.optimize import minimize
from scipy.special import softmax

from . import _ascent
from ._info import logits, mi_cond, row_softmax, safe_log_ratio
from .errors import DivisionBySupportZero, SingularWeight
from .prob import ConditionalDistribution, FiniteDistribution, as_finite, as_joint
from .put import _embed_identity, pull_back

CONSTRAINT_TOL = 1e-12
ALT_TOL = 1e-14
ALT_MAX_ITER = 500


@dataclass(frozen=True, eq=False)
class PerturbationMatrix:
    """Perturbation ``J`` of a conditional distribution around a common row.

    ``base`` is the weighting ``P_A`` over rows. Entries lie in ``[-1, 1]``,
    rows sum to zero and ``base``-weighted columns sum to zero.
    """

    entries: np.ndarray
    base: FiniteDistribution

    def __post_init__(self):
        j = np.array(self.entries, dtype=float)
        base = as_finite(self.base)
        if j.ndim != 2 or j.shape[0] != base.size:
            raise ValueError(f"entries must be a {base.size} x n matrix, got shape {j.shape}")
        if not np.all(np.isfinite(j)):
            raise ValueError("entries must be finite")
        if np.abs(j).max(initial=0.0) > 1.0 + CONSTRAINT_TOL:
            raise ValueError("entries must lie in [-1, 1]")
        if np.abs(j.sum(1)).max(initial=0.0) > CONSTRAINT_TOL:
            raise ValueError("rows must sum to 0")
        if np.abs(base.probs @ j).max(initial=0.0) > CONSTRAINT_TOL:
            raise ValueError("weighted column sums must be 0")
        j.setflags(write=False)
        object.__setattr__(self, "entries", j)
        object.__setattr__(self, "base", base)

    @property
    def shape(self):
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    @classmethod
    def zeros(cls, base, n_cols):
        base = as_finite(base)
        return cls(np.zeros((base.size, n_cols)), base)


@dataclass(frozen=True)
class EuclidResult:
    value: float
    rho: float
    best_j: PerturbationMatrix
    best_theta: PerturbationMatrix | None
    best_qz: FiniteDistribution
    best_qw: FiniteDistribution
    aux_channel: ConditionalDistribution | None = None
    trace: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# objective pieces


def _weighted_sum(weights, squares, what):
    """``sum weights * squares`` with ``0 * (1/0)`` terms dropped and nonzero ones rejected."""
    live = weights > 0
    bad = ~live & (np.abs(squares) > 0)
    if np.any(bad):
        raise what
    return float((squares[live] / weights[live]).sum())


def chisq_leakage(j, p_u, q_z) -> float:
    """Chi-square leakage ``sum_{u,z: Q_Z(z) > 0} P_U(u) J(u,z)^2 / Q_Z(z)``."""
    j = np.asarray(j, dtype=float)
    p_u = np.asarray(as_finite(p_u).probs)
    q_z = np.asarray(as_finite(q_z).probs)
    col = (p_u[:, None] * j * j).sum(0)
    return _weighted_sum(q_z, col, DivisionBySupportZero("J has a nonzero column where Q_Z = 0"))


def _utility_form(p_uv, right, j, q_w):
    """``sum_{v,w} P_V(v)/q_w(w) (sum_{u,z} P_U|V(u|v) J(u,z) right(z,w))^2``."""
    p_v = p_uv.sum(0)
    k = (p_uv / np.where(p_v > 0, p_v, 1.0)[None, :]).T  # P_U|V as (v, u)
    c = k @ j @ right
    sq = (p_v[:, None] * c * c).sum(0)
    return _weighted_sum(q_w, sq, SingularWeight("zero output weight with nonzero numerator"))


def h_quadratic(j, p_uv, p_w_given_z, q_z, rho) -> float:
    """Utility ``(rho^2 / 2) sum P_V/Qbar_W (sum P_U|V P_W|Z J)^2`` with ``Qbar_W = Q_Z P_W|Z``."""
    p = as_joint(p_uv).table
    b = np.asarray(p_w_given_z, dtype=float)
    q_w = as_finite(q_z).probs @ b
    return 0.5 * rho**2 * _utility_form(p, b, np.asarray(j, dtype=float), q_w)


def l_quartic(j, theta, p_uv, q_z, q_w, rho) -> float:
    """Noisy-channel utility ``(rho^4 / 2) sum P_V/Q_W (sum P_U|V J Theta)^2``."""
    p = as_joint(p_uv).table
    return 0.5 * rho**4 * _utility_form(p, np.asarray(theta, dtype=float),
                                        np.asarray(j, dtype=float), as_finite(q_w).probs)


def perturbed_mechanism(j, q_z, rho) -> np.ndarray:
    """``Q_Z(z) + rho J(u, z)`` as a raw matrix; entries may leave [0, 1] when ``rho`` is large."""
    return as_finite(q_z).probs[None, :] + rho * np.asarray(j, dtype=float)


# --------------------------------------------------------------------------
# eigen-steps


def _subspace(row_weights, n_cols, dead_rows=(), dead_cols=()):
    """Orthonormal basis (columns) of ``{X : rows sum 0, weighted columns sum 0, dead entries 0}``."""
    n_rows = len(row_weights)
    cons = []
    for a in range(n_rows):
        m = np.zeros((n_rows, n_cols))
        m[a] = 1.0
        cons.append(m.ravel())
    for b in range(n_cols):
        m = np.zeros((n_rows, n_cols))
        m[:, b] = row_weights
        cons.append(m.ravel())
    for a in dead_rows:
        for b in range(n_cols):
            m = np.zeros((n_rows, n_cols))
            m[a, b] = 1.0
            cons.append(m.ravel())
    for b in dead_cols:
        for a in range(n_rows):
            m = np.zeros((n_rows, n_cols))
            m[a, b] = 1.0
            cons.append(m.ravel())
    return null_space(np.array(cons))


def top_quadratic(left, right, out_weights, basis, metric):
    """Maximize ``sum_{v,w} out_weights (left X right)^2`` over ``X = basis y`` with ``X^T diag(metric) X <= 1``.

    Returns ``(value, X)`` with ``X`` on the ellipsoid boundary (or zero
    when the subspace is trivial or the form vanishes on it).
    """
    n_rows, n_cols = left.shape[1], right.shape[0]
    if basis.shape[1] == 0:
        return 0.0, np.zeros((n_rows, n_cols))
    # coefficient of X(a, b) in (left X right)(v, w)
    g = np.einsum("va,bw->vwab", left, right).reshape(-1, n_rows * n_cols)
    g = g[out_weights.ravel() > 0]
    wts = out_weights.ravel()[out_weights.ravel() > 0]
    gb = g @ basis
    a_red = gb.T @ (wts[:, None] * gb)
    b_red = basis.T @ (metric[:, None] * basis)
    vals, vecs = eigh(a_red, b_red)
    value = max(float(vals[-1]), 0.0)
    if value <= 0:
        return 0.0, np.zeros((n_rows, n_cols))
    x = (basis @ vecs[:, -1]).reshape(n_rows, n_cols)
    x /= np.sqrt(float((metric * x.ravel() ** 2).sum()))
    # canonical sign for reproducible output
    flat = x.ravel()
    if flat[np.argmax(np.abs(flat) > 1e-12 * np.abs(flat).max())] < 0:
        x = -x
    return value, x


def _box(x):
    m = np.abs(x).max(initial=0.0)
    return (x / m, True) if m > 1.0 else (x, False)


def _j_metric(p_u, q_z):
    """Ellipsoid weights ``P_U(u) / Q_Z(z)`` (dead columns get weight 1 and are pinned to 0 anyway)."""
    return (p_u[:, None] / np.where(q_z > 0, q_z, 1.0)[None, :]).ravel()


def _dead(p):
    return tuple(int(i) for i in np.flatnonzero(np.asarray(p) <= 0))


def _pv_left(p_uv):
    p_v = p_uv.sum(0)
    return p_v, (p_uv / np.where(p_v > 0, p_v, 1.0)[None, :]).T


def _out_weights(p_v, q_w):
    return p_v[:, None] / np.where(q_w > 0, q_w, np.inf)[None, :]


def inner_j(p_uv, q_z, p_w_given_z):
    """Best ``J`` for fixed ``(Q_Z, P_W|Z)``: returns ``(eigenvalue, J)`` with ``chisq(J) = 1``."""
    p = as_joint(p_uv).table
    q_z = np.asarray(q_z, dtype=float)
    b = np.asarray(p_w_given_z, dtype=float)
    p_u = p.sum(1)
    p_v, k = _pv_left(p)
    basis = _subspace(p_u, len(q_z), dead_rows=_dead(p_u), dead_cols=_dead(q_z))
    return top_quadratic(k, b, _out_weights(p_v, q_z @ b), basis, _j_metric(p_u, q_z))


# --------------------------------------------------------------------------
# general channel


def _outer_fun(p_uv, rate, mu, nz, nw):
    """Eigenvalue minus rate penalty, with its envelope gradient, on ``[logits Q_Z, logits P_W|Z]``."""
    p_u = p_uv.sum(1)
    p_v, k = _pv_left(p_uv)
    basis = _subspace(p_u, nz, dead_rows=_dead(p_u))

    def fun(x):
        q_z = softmax(x[:nz])
        b = row_softmax(x[nz:].reshape(nz, nw))
        q_w = q_z @ b
        lam, j = top_quadratic(k, b, _out_weights(p_v, q_w), basis, _j_metric(p_u, q_z))
        kj = k @ j
        c = kj @ b
        s = (p_v[:, None] * c * c).sum(0) / q_w**2  # d obj / d Qbar_W, negated
        g_b = 2.0 * kj.T @ (p_v[:, None] * c / q_w[None, :]) - q_z[:, None] * s[None, :]
        g_q = -(b * s[None, :]).sum(1) + lam * (p_u[:, None] * j * j).sum(0) / q_z**2
        val = lam
        log_zw = safe_log_ratio(b, q_w[None, :])
        i_zw = max(float((q_z[:, None] * b * log_zw).sum()), 0.0)
        pen, slope = _ascent.penalty(i_zw, rate, mu)
        if pen:
            val -= pen
            g_b = g_b - slope * q_z[:, None] * log_zw
            g_q = g_q - slope * (b * log_zw).sum(1)
        grad = np.concatenate([q_z * (g_q - (q_z * g_q).sum()), (b * (g_b - (b * g_b).sum(1, keepdims=True))).ravel()])
        return val, grad

    return fun


def euclid_put(p_uv, rate_budget: float, rho: float, restarts: int = 32, seed: int = 0) -> EuclidResult:
    """Quadratic approximation of the tradeoff at leakage ``rho^2 / 2``.

    Maximizes the utility form over ``(Q_Z, P_W|Z, J)`` subject to
    ``I(Q_Z, P_W|Z) <= rate_budget`` and the chi-square leakage ellipsoid,
    with ``|Z| = |U|`` and ``|W| = |Z| + 1``. The outer search over
    ``(Q_Z, P_W|Z)`` uses multi-start penalty ascent with envelope
    gradients; the returned ``J`` is the exact inner eigen-solution.
    """
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if not rate_budget > 0:
        raise ValueError(f"rate_budget must be positive, got {rate_budget}")
    p = as_joint(p_uv).table
    p_u = p.sum(1)
    nz = p.shape[0]
    nw = nz + 1
    rng = np.random.default_rng(seed)

    ident = _embed_identity(nz)
    uni = np.full(nz, 1.0 / nz)
    starts = [(uni, pull_back(uni, ident, rate_budget, np.inf))]
    starts += [(rng.dirichlet(np.ones(nz)), _ascent.dirichlet_rows(rng, nz, nw)) for _ in range(restarts)]

    def one(start):
        q0, b0 = start
        x = np.concatenate([logits(q0), logits(b0).ravel()])
        for mu in _ascent.PENALTY_SCHEDULE:
            x, _ = _ascent.maximize(_outer_fun(p, rate_budget, mu, nz, nw), x)
        q_z = softmax(x[:nz])
        b = pull_back(q_z, row_softmax(x[nz:].reshape(nz, nw)), rate_budget, 1e-3 * rate_budget)
        if b is None:
            return None
        lam, j = inner_j(p, q_z, b)
        return _ascent.Candidate(lam, (q_z, b, j))

    cands = [c for c in _ascent.run_all(one, starts) if c is not None]
    best = _ascent.select_best(cands)
    q_z, b, j = best.mats
    j, rescaled = _box(j)
    value = h_quadratic(j, p, b, q_z, rho)
    mech = perturbed_mechanism(j, q_z, rho)
    trace = dict(restarts=len(starts), feasible_restarts=len(cands), eigenvalue=best.value,
                 box_rescaled=rescaled, rate=mi_cond(q_z, b),
                 mechanism_valid=bool(np.all((mech >= 0) & (mech <= 1))))
    return EuclidResult(value, float(rho), PerturbationMatrix(j, FiniteDistribution(p_u)), None,
                        FiniteDistribution(q_z), FiniteDistribution(q_z @ b),
                        ConditionalDistribution(b), trace)


# --------------------------------------------------------------------------
# extremely noisy channel


def alternate(p_uv, q_z, q_w, theta0, max_iter=ALT_MAX_ITER, tol=ALT_TOL):
    """Alternating eigen-steps on ``J`` and ``Theta`` at fixed ``(Q_Z, Q_W)``.

    Returns ``(value, J, Theta, history)`` where ``value`` is the form
    without the ``rho^4 / 2`` prefactor and ``history`` lists the objective
    after every half-step.
    """
    p = as_joint(p_uv).table
    q_z = np.asarray(q_z, dtype=float)
    q_w = np.asarray(q_w, dtype=float)
    p_u = p.sum(1)
    p_v, k = _pv_left(p)
    nz, nw = len(q_z), len(q_w)
    j_basis = _subspace(p_u, nz, dead_rows=_dead(p_u), dead_cols=_dead(q_z))
    t_basis = _subspace(q_z, nw, dead_rows=_dead(q_z), dead_cols=_dead(q_w))
    j_metric = _j_metric(p_u, q_z)
    t_metric = (q_z[:, None] / np.where(q_w > 0, q_w, 1.0)[None, :]).ravel()
    wts = _out_weights(p_v, q_w)
    theta = np.asarray(theta0, dtype=float)
    j = np.zeros((len(p_u), nz))
    history = []
    prev = -np.inf
    for _ in range(max_iter):
        val, j = top_quadratic(k, theta, wts, j_basis, j_metric)
        history.append(val)
        val, theta = top_quadratic(k @ j, np.eye(nw), wts, t_basis, t_metric)
        history.append(val)
        if val - prev <= tol * max(1.0, abs(val)):
            break
        prev = val
    return history[-1], j, theta, history


def _random_theta(rng, q_z, nw):
    basis = _subspace(q_z, nw, dead_rows=_dead(q_z))
    if basis.shape[1] == 0:
        return np.zeros((len(q_z), nw))
    return (basis @ rng.standard_normal(basis.shape[1])).reshape(len(q_z), nw)


def euclid_put_noisy(p_uv, rho: float, restarts: int = 16, seed: int = 0,
                     theta_starts: int = 4) -> EuclidResult:
    """Quartic approximation for a channel with ``tau C = rho^2 / 2``.

    Maximizes over ``(Q_Z, Q_W)`` by multi-start Nelder-Mead on their
    logits; at each point the perturbations come from :func:`alternate`
    started from ``theta_starts`` random directions.
    """
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    p = as_joint(p_uv).table
    p_u = p.sum(1)
    nz = p.shape[0]
    nw = nz + 1
    rng = np.random.default_rng(seed)
    theta_seeds = rng.integers(0, 2**32, size=theta_starts)

    def inner(x):
        q_z = softmax(x[:nz])
        q_w = softmax(x[nz:])
        best = None
        for s in theta_seeds:
            t0 = _random_theta(np.random.default_rng(s), q_z, nw)
            val, j, theta, hist = alternate(p, q_z, q_w, t0)
            # score what survives the box rescaling
            shrink = max(1.0, np.abs(j).max(initial=0.0)) ** 2 * max(1.0, np.abs(theta).max(initial=0.0)) ** 2
            out = (val / shrink, j, theta, hist)
            if best is None or out[0] > best[0]:
                best = out
        return best, q_z, q_w

    starts = [np.zeros(nz + nw)]
    starts += [np.concatenate([logits(rng.dirichlet(np.ones(nz))), logits(rng.dirichlet(np.ones(nw)))])
               for _ in range(restarts)]

    def one(x0):
        res = minimize(lambda x: -inner(x)[0][0], x0, method="Nelder-Mead",
                       options=dict(xatol=1e-8, fatol=1e-13, maxiter=4000))
        (val, j, theta, hist), q_z, q_w = inner(res.x)
        return _ascent.Candidate(val, (q_z, q_w, j, theta), dict(alternation=hist))

    cands = _ascent.run_all(one, starts)
    best = _ascent.select_best(cands)
    q_z, q_w, j, theta = best.mats
    j, r1 = _box(j)
    theta, r2 = _box(theta)
    value = l_quartic(j, theta, p, q_z, q_w, rho)
    mech = perturbed_mechanism(j, q_z, rho)
    aux = perturbed_mechanism(theta, q_w, rho)
    trace = dict(restarts=len(starts), form_value=best.info["alternation"][-1],
                 box_rescaled=bool(r1 or r2),
                 mechanism_valid=bool(np.all((mech >= 0) & (mech <= 1))
                                      and np.all((aux >= 0) & (aux <= 1))),
                 alternation=best.info["alternation"])
    return EuclidResult(value, float(rho), PerturbationMatrix(j, FiniteDistribution(p_u)),
                        PerturbationMatrix(theta, FiniteDistribution(q_z)),
                        FiniteDistribution(q_z), FiniteDistribution(q_w), None, trace)
