"""Finite-length converse bound on the tradeoff exponent.

For any multipliers ``l1, l2 >= 0``, smoothing weight ``gamma > 0`` and
mechanism ``P_Z|U``, the exponent at source length ``k`` and type-I level
``eps`` is at most

    g(l1, l2) + zeta(l1, l2, gamma, tau)
      - (6 l1 + 3 l2 + 2 gamma) log(1 - eps) / k
      + (9 l1 + 3 l2 + 3 gamma) log 2 / k
      + l2 * margin(P_Z|U, (1 - eps) / 4) / sqrt(k).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .dual import dual_g, dual_minimize
from .errors import VacuousBound
from .prob import PutInstance, as_conditional, as_joint, density_moments

COMPONENTS = ("g_term", "zeta_term", "log1me_term", "log2_term", "berry_esseen_term")


@dataclass(frozen=True)
class BoundParams:
    lambda1: float
    lambda2: float
    gamma: float
    k: int
    epsilon: float
    tau: float
    leak: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "tau", "leak"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        object.__setattr__(self, "k", int(self.k))


@dataclass(frozen=True)
class BoundResult:
    """Upper bound and its five additive parts.

    A vacuous result has ``bound = inf``; its Berry-Esseen component is
    ``inf`` as well and ``vacuous_kind`` says which side of (0, 1) the
    quantile argument fell on.
    """

    bound: float
    components: dict = field(default_factory=dict)
    vacuous: bool = False
    vacuous_kind: str | None = None


def _sizes(sizes, *names):
    out = []
    for n in names:
        if n == "w" and "w" not in sizes:
            out.append(sizes["z"] + 1)
        else:
            out.append(sizes[n])
    if any(v < 1 for v in out):
        raise ValueError(f"alphabet sizes must be >= 1, got {sizes}")
    return out


def c_constant(lambda1, lambda2, tau, sizes) -> float:
    """``log|V| + (l1 + l2) log|Z| + l1 tau log|Y|``; ``sizes`` maps ``'v', 'z', 'y'`` to sizes."""
    n_v, n_z, n_y = _sizes(sizes, "v", "z", "y")
    return math.log(n_v) + (lambda1 + lambda2) * math.log(n_z) + lambda1 * tau * math.log(n_y)


def zeta_constant(lambda1, lambda2, gamma, tau, sizes) -> float:
    """Smoothing slack; ``sizes`` maps ``'u', 'v', 'z', 'x', 'y'`` (and optionally ``'w'``, default ``|Z|+1``).

    Returned as computed; a warning is issued when it is negative, which can
    happen for very small ``gamma``.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    n_u, n_v, n_z, n_w, n_x, n_y = _sizes(sizes, "u", "v", "z", "w", "x", "y")
    c = c_constant(lambda1, lambda2, tau, sizes)
    s = math.sqrt(2.0 * c / gamma)
    zeta = 0.0
    if s > 0:
        zeta = 3.0 * s * (math.log(n_w * n_v / s) + lambda1 * math.log(n_z * n_w / s)
                          + lambda2 * math.log(n_u * n_z / s))
    if lambda1 * tau > 0:
        s2 = math.sqrt(2.0 * c / (tau * gamma))
        zeta += 3.0 * lambda1 * tau * s2 * math.log(n_x * n_y / s2)
    if zeta < 0:
        warnings.warn(f"zeta is negative ({zeta:.3g}) at gamma = {gamma:.3g}", RuntimeWarning,
                      stacklevel=2)
    return zeta


def q_function(x):
    """Standard normal upper tail ``P(N > x)``."""
    return ndtr(-np.asarray(x, dtype=float))


def q_inverse(p: float, tol: float = 1e-12) -> float:
    """Inverse of the upper tail: ``x`` with ``P(N > x) = p``, for ``p`` in (0, 1).

    Starts from the library quantile and polishes with Newton steps on the
    tail until the residual is below ``tol`` relative to ``p``.
    """
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    x = -float(ndtri(p))
    for _ in range(50):
        r = float(q_function(x)) - p
        if abs(r) <= tol * p:
            break
        dens = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        x += r / dens
    return x


def berry_esseen_margin(p_u, p_z_given_u, eps_arg: float, k: int) -> float:
    """``sqrt(V) Qinv(eps_arg - T / (6 sqrt(k V^3)))`` for the leakage density, 0 if ``V = 0``.

    Raises
    ------
    VacuousBound
        When the quantile argument is outside (0, 1).
    """
    if not 0 < eps_arg < 1:
        raise ValueError(f"eps_arg must lie in (0, 1), got {eps_arg}")
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    _, var, third = density_moments(p_u, p_z_given_u)
    if var <= 0:
        return 0.0
    a = eps_arg - third / (6.0 * math.sqrt(k * var ** 3))
    if a <= 0:
        raise VacuousBound(f"quantile argument {a:.6g} <= 0 at k = {k}", a, "low")
    if a >= 1:
        raise VacuousBound(f"quantile argument {a:.6g} >= 1 at k = {k}", a, "high")
    return math.sqrt(var) * q_inverse(a)


def assemble_bound(g_value, p_u, p_z_given_u, params: BoundParams, sizes) -> BoundResult:
    """Combine a known dual value with the finite-length corrections."""
    l1, l2, gam, k, eps = params.lambda1, params.lambda2, params.gamma, params.k, params.epsilon
    comps = {
        "g_term": float(g_value),
        "zeta_term": zeta_constant(l1, l2, gam, params.tau, sizes),
        "log1me_term": -(6 * l1 + 3 * l2 + 2 * gam) * math.log1p(-eps) / k,
        "log2_term": (9 * l1 + 3 * l2 + 3 * gam) * math.log(2.0) / k,
        "berry_esseen_term": 0.0,
    }
    if l2 > 0:
        try:
            margin = berry_esseen_margin(p_u, p_z_given_u, (1.0 - eps) / 4.0, k)
        except VacuousBound as exc:
            comps["berry_esseen_term"] = math.inf
            return BoundResult(math.inf, comps, True, exc.kind)
        comps["berry_esseen_term"] = l2 * margin / math.sqrt(k)
    return BoundResult(math.fsum(comps[c] for c in COMPONENTS), comps, False, None)


def _instance_sizes(p_uv, a, channel):
    w = as_conditional(channel).matrix
    return dict(u=p_uv.shape[0], v=p_uv.shape[1], z=a.shape[1], x=w.shape[0], y=w.shape[1])


def theorem2_bound(p_uv, p_z_given_u, channel, params: BoundParams, g_value=None,
                   restarts: int = 64, seed: int = 0) -> BoundResult:
    """Finite-length upper bound at the given multipliers.

    ``g_value`` may be supplied to skip re-evaluating the dual function.
    """
    p = as_joint(p_uv).table
    a = as_conditional(p_z_given_u).matrix
    if g_value is None:
        g_value = dual_g(params.lambda1, params.lambda2, p, a, channel, params.tau, params.leak,
                         restarts=restarts, seed=seed).value
    return assemble_bound(g_value, p.sum(1), a, params, _instance_sizes(p, a, channel))


def bound_schedule(instance: PutInstance, p_z_given_u, epsilon: float, k_list,
                   restarts: int = 16, seed: int = 0, dual=None):
    """Bound at each ``k`` with ``gamma = sqrt(k)`` and the minimizing multipliers.

    ``dual`` may carry a precomputed ``(lambda1, lambda2, value)`` from
    :func:`putkit.dual.dual_minimize`. Returns a list of ``(k, BoundResult)``.
    """
    ks = [int(k) for k in k_list]
    if any(b < a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_list must be sorted ascending")
    p = instance.p_uv.table
    a = as_conditional(p_z_given_u).matrix
    if dual is None:
        dual = dual_minimize(p, a, instance.channel, instance.tau, instance.leak,
                             restarts=restarts, seed=seed)
    lam1, lam2, value = dual
    if not math.isfinite(value):
        raise ValueError("mechanism violates the leakage budget; the dual is unbounded")
    sizes = _instance_sizes(p, a, instance.channel)
    out = []
    for k in ks:
        params = BoundParams(lam1, lam2, math.sqrt(k), k, epsilon, instance.tau, instance.leak)
        out.append((k, assemble_bound(value, p.sum(1), a, params, sizes)))
    return out
