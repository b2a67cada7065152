"""Finite-alphabet probability types and exact information measures.

Every quantity is in nats. Alphabets are identified by their size and the
index range ``[0, n)``; symbolic labels live only in the CLI layer.

Validation is strict: a vector whose entries are negative or whose total
differs from one by more than :data:`PROB_TOL` is rejected rather than
renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from .errors import AlphabetMismatch, InvalidDistribution

PROB_TOL = 1e-12

# Densities whose spread over the support is below this are treated as
# constant, so V = T = 0 exactly instead of rounding noise around zero.
_CONSTANT_DENSITY_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _check_prob_vector(p, what="distribution"):
    if p.ndim != 1 or p.size == 0:
        raise InvalidDistribution(f"{what} must be a nonempty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidDistribution(f"{what} has non-finite entries")
    if np.any(p < 0):
        raise InvalidDistribution(f"{what} has negative entries: min={p.min():.3g}")
    total = p.sum()
    if abs(total - 1.0) > PROB_TOL:
        raise InvalidDistribution(f"{what} sums to {total!r}, not 1")


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Probability vector over the alphabet ``{0, ..., n-1}``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        _check_prob_vector(p)
        object.__setattr__(self, "probs", p)

    @property
    def size(self) -> int:
        return self.probs.size

    def __len__(self):
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, FiniteDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    __hash__ = None

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    @classmethod
    def uniform(cls, n: int) -> FiniteDistribution:
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n: int, i: int) -> FiniteDistribution:
        p = np.zeros(n)
        p[i] = 1.0
        return cls(p)


@dataclass(frozen=True, eq=False)
class ConditionalDistribution:
    """Row-stochastic matrix; row ``x`` is the output distribution given input ``x``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or 0 in m.shape:
            raise InvalidDistribution(f"channel must be a nonempty matrix, got shape {m.shape}")
        for i, row in enumerate(m):
            _check_prob_vector(row, what=f"row {i}")
        object.__setattr__(self, "matrix", m)

    @property
    def n_in(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_out(self) -> int:
        return self.matrix.shape[1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, ConditionalDistribution):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)

    __hash__ = None

    def row(self, x: int) -> FiniteDistribution:
        return FiniteDistribution(self.matrix[x])

    def output(self, p_x) -> FiniteDistribution:
        """Output marginal induced by input distribution ``p_x``."""
        p = as_finite(p_x)
        _require_same(p.size, self.n_in, "input distribution", "channel input")
        return FiniteDistribution(_clean(p.probs @ self.matrix))

    def then(self, other: ConditionalDistribution) -> ConditionalDistribution:
        """Cascade ``self`` followed by ``other``."""
        _require_same(self.n_out, other.n_in, "channel output", "next channel input")
        return ConditionalDistribution(_clean_rows(self.matrix @ other.matrix))

    @classmethod
    def identity(cls, n: int) -> ConditionalDistribution:
        return cls(np.eye(n))

    @classmethod
    def constant(cls, row, n_in: int) -> ConditionalDistribution:
        r = as_finite(row).probs
        return cls(np.tile(r, (n_in, 1)))

    @classmethod
    def bsc(cls, crossover: float) -> ConditionalDistribution:
        e = float(crossover)
        if not 0.0 <= e <= 1.0:
            raise InvalidDistribution(f"crossover must lie in [0, 1], got {e}")
        return cls(np.array([[1.0 - e, e], [e, 1.0 - e]]))


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Nonnegative tensor over a product of finite alphabets with unit mass."""

    table: np.ndarray

    def __post_init__(self):
        t = _frozen(self.table)
        if t.ndim == 0 or t.size == 0:
            raise InvalidDistribution("joint table must have at least one nonempty axis")
        _check_prob_vector(t.ravel(), what="joint table")
        object.__setattr__(self, "table", t)

    @property
    def shape(self) -> tuple:
        return self.table.shape

    @property
    def ndim(self) -> int:
        return self.table.ndim

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.table, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, JointDistribution):
            return NotImplemented
        return np.array_equal(self.table, other.table)

    __hash__ = None

    def marginal(self, *axes: int):
        """Marginal on ``axes`` (in the given order).

        A single axis yields a :class:`FiniteDistribution`; several axes
        yield a :class:`JointDistribution` with its axes permuted to match.
        """
        if not axes:
            raise ValueError("marginal needs at least one axis")
        axes = tuple(a % self.ndim for a in axes)
        if len(set(axes)) != len(axes):
            raise ValueError(f"repeated axis in {axes}")
        drop = tuple(a for a in range(self.ndim) if a not in axes)
        m = self.table.sum(axis=drop) if drop else self.table
        kept = sorted(axes)
        m = np.transpose(m, [kept.index(a) for a in axes])
        if len(axes) == 1:
            return FiniteDistribution(m)
        return JointDistribution(m)

    def conditional(self, given: int) -> ConditionalDistribution:
        """Channel from axis ``given`` to the remaining axes (flattened in C order).

        Rows of zero-mass symbols are filled with the uniform distribution;
        they carry no weight in any expectation.
        """
        given = given % self.ndim
        t = np.moveaxis(self.table, given, 0).reshape(self.shape[given], -1)
        mass = t.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            rows = np.where(mass > 0, t / mass, 1.0 / t.shape[1])
        return ConditionalDistribution(_clean_rows(rows))

    @classmethod
    def from_channel(cls, p_x, w) -> JointDistribution:
        """Joint of ``(X, Y)`` from an input distribution and a channel."""
        p = as_finite(p_x)
        w = as_conditional(w)
        _require_same(p.size, w.n_in, "input distribution", "channel input")
        return cls(p.probs[:, None] * w.matrix)


@dataclass(frozen=True, eq=False)
class PutInstance:
    """Problem data: source ``P_UV``, channel ``P_Y|X``, bandwidth ratio and leakage budget.

    ``z_size`` is the mechanism output alphabet size; it defaults to ``|U|``.
    """

    p_uv: JointDistribution
    channel: ConditionalDistribution
    tau: float
    leak: float
    z_size: int | None = None

    def __post_init__(self):
        p_uv = as_joint(self.p_uv)
        if p_uv.ndim != 2:
            raise InvalidDistribution(f"P_UV must be a matrix, got {p_uv.ndim} axes")
        object.__setattr__(self, "p_uv", p_uv)
        object.__setattr__(self, "channel", as_conditional(self.channel))
        for name in ("tau", "leak"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite nonnegative number, got {v}")
            object.__setattr__(self, name, v)
        z = p_uv.shape[0] if self.z_size is None else int(self.z_size)
        if z < 1:
            raise ValueError(f"z_size must be positive, got {z}")
        object.__setattr__(self, "z_size", z)

    @property
    def p_u(self) -> FiniteDistribution:
        return self.p_uv.marginal(0)

    @property
    def p_v(self) -> FiniteDistribution:
        return self.p_uv.marginal(1)

    @property
    def p_v_given_u(self) -> ConditionalDistribution:
        return self.p_uv.conditional(0)

    def replace(self, **changes) -> PutInstance:
        fields = dict(p_uv=self.p_uv, channel=self.channel, tau=self.tau,
                      leak=self.leak, z_size=self.z_size)
        fields.update(changes)
        return PutInstance(**fields)

    def __eq__(self, other):
        if not isinstance(other, PutInstance):
            return NotImplemented
        return (self.p_uv == other.p_uv and self.channel == other.channel
                and self.tau == other.tau and self.leak == other.leak
                and self.z_size == other.z_size)

    __hash__ = None


def binary_symmetric_source(q: float, p_u=(0.5, 0.5)) -> JointDistribution:
    """``P_UV`` with ``U ~ p_u`` and ``V`` equal to ``U`` with probability ``q``."""
    p = as_finite(p_u)
    _require_same(p.size, 2, "p_u", "binary alphabet")
    return JointDistribution.from_channel(p, ConditionalDistribution.bsc(1.0 - q))


# --------------------------------------------------------------------------
# coercion helpers


def as_finite(x) -> FiniteDistribution:
    return x if isinstance(x, FiniteDistribution) else FiniteDistribution(x)


def as_conditional(x) -> ConditionalDistribution:
    return x if isinstance(x, ConditionalDistribution) else ConditionalDistribution(x)


def as_joint(x) -> JointDistribution:
    return x if isinstance(x, JointDistribution) else JointDistribution(x)


def _require_same(a, b, what_a, what_b):
    if a != b:
        raise AlphabetMismatch(f"{what_a} has size {a} but {what_b} has size {b}")


def _clean(p):
    # products of valid stochastic objects can drift by ~1e-16; renormalize that drift only
    p = np.maximum(p, 0.0)
    return p / p.sum()


def _clean_rows(m):
    m = np.maximum(m, 0.0)
    return m / m.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------------
# information measures


def entropy(p) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = as_finite(p).probs
    return float(-xlogy(p, p).sum())


def kl_divergence(p, q) -> float:
    """``D(p || q)`` in nats; ``math.inf`` when ``p`` is not absolutely continuous w.r.t. ``q``."""
    p = as_finite(p).probs
    q = as_finite(q).probs
    _require_same(p.size, q.size, "p", "q")
    if np.any((p > 0) & (q == 0)):
        return math.inf
    mask = p > 0
    return float(max(np.sum(p[mask] * np.log(p[mask] / q[mask])), 0.0))


def total_variation(p, q) -> float:
    """L1 distance ``sum |p - q|`` (the norm used with Pinsker's inequality)."""
    p = as_finite(p).probs
    q = as_finite(q).probs
    _require_same(p.size, q.size, "p", "q")
    return float(np.abs(p - q).sum())


def mutual_information(p_x, w) -> float:
    """``I(P_X, P_Y|X)`` in nats."""
    p = as_finite(p_x).probs
    w = as_conditional(w).matrix
    _require_same(p.size, w.shape[0], "input distribution", "channel input")
    p_y = p @ w
    joint = p[:, None] * w
    u, y = np.nonzero(joint > 0)
    # log W(y|x) - log P_Y(y) avoids underflow in the product P_X P_Y
    terms = joint[u, y] * (np.log(w[u, y]) - np.log(p_y[y]))
    return float(max(terms.sum(), 0.0))


class DensityTable(NamedTuple):
    """Information density on the support of ``P_U x P_Z|U``.

    Entry ``i`` is the pair ``(u_index[i], z_index[i])`` with value
    ``values[i] = log P_Z|U(z|u) / P_Z(z)`` and joint weight ``weights[i]``.
    """

    u_index: np.ndarray
    z_index: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    def mean(self) -> float:
        return float(np.dot(self.weights, self.values))


def information_density_table(p_u, p_z_given_u) -> DensityTable:
    p = as_finite(p_u).probs
    w = as_conditional(p_z_given_u).matrix
    _require_same(p.size, w.shape[0], "P_U", "mechanism input")
    p_z = p @ w
    joint = p[:, None] * w
    u_idx, z_idx = np.nonzero(joint > 0)
    values = np.log(w[u_idx, z_idx]) - np.log(p_z[z_idx])
    return DensityTable(u_idx, z_idx, values, joint[u_idx, z_idx])


def density_moments(p_u, p_z_given_u) -> tuple[float, float, float]:
    """Mean ``I``, variance ``V`` and third absolute central moment ``T`` of the density."""
    table = information_density_table(p_u, p_z_given_u)
    v, wts = table.values, table.weights
    mean = float(np.dot(wts, v))
    if v.max() - v.min() <= _CONSTANT_DENSITY_TOL * max(1.0, abs(mean)):
        return mean, 0.0, 0.0
    dev = np.abs(v - mean)
    return mean, float(np.dot(wts, dev**2)), float(np.dot(wts, dev**3))
