import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from putkit.errors import AlphabetMismatch, InvalidDistribution
from putkit.prob import (
    ConditionalDistribution,
    FiniteDistribution,
    JointDistribution,
    PutInstance,
    binary_symmetric_source,
    density_moments,
    entropy,
    information_density_table,
    kl_divergence,
    mutual_information,
    total_variation,
)


def _simplex(n_min=2, n_max=6):
    def build(n):
        return arrays(float, n, elements=st.floats(0.0, 1.0)).filter(lambda a: a.sum() > 1e-3).map(
            lambda a: a / a.sum())
    return st.integers(n_min, n_max).flatmap(build)


def _pair(n_min=2, n_max=6):
    def build(n):
        vec = arrays(float, n, elements=st.floats(1e-3, 1.0)).map(lambda a: a / a.sum())
        return st.tuples(vec, vec)
    return st.integers(n_min, n_max).flatmap(build)


def _channel(n_in, n_out):
    return arrays(float, (n_in, n_out), elements=st.floats(1e-3, 1.0)).map(
        lambda m: m / m.sum(1, keepdims=True))


def test_entropy_binary():
    expected = -(0.8 * math.log(0.8) + 0.2 * math.log(0.2))
    assert entropy([0.8, 0.2]) == pytest.approx(expected, abs=1e-15)
    assert entropy([0.8, 0.2]) == pytest.approx(0.5004024, abs=1e-7)


def test_entropy_zero_mass_and_uniform():
    assert entropy([1.0, 0.0, 0.0]) == 0.0
    assert entropy(FiniteDistribution.uniform(5)) == pytest.approx(math.log(5), abs=1e-14)


def test_kl_against_uniform():
    assert kl_divergence([0.8, 0.2], [0.5, 0.5]) == pytest.approx(0.1927448, abs=1e-7)


def test_kl_infinite_without_absolute_continuity():
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)


def test_mutual_information_bsc():
    expected = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)
    assert mutual_information([0.5, 0.5], ConditionalDistribution.bsc(0.1)) == pytest.approx(expected, abs=1e-14)


def test_invalid_distributions_rejected():
    with pytest.raises(InvalidDistribution):
        FiniteDistribution([0.6, 0.6])
    with pytest.raises(InvalidDistribution):
        FiniteDistribution([1.1, -0.1])
    with pytest.raises(InvalidDistribution):
        ConditionalDistribution([[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(InvalidDistribution):
        FiniteDistribution([np.nan, 1.0])


def test_alphabet_mismatch():
    with pytest.raises(AlphabetMismatch):
        kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])
    with pytest.raises(AlphabetMismatch):
        mutual_information([0.5, 0.5], np.full((3, 2), 0.5))


def test_joint_marginals_and_conditional():
    src = binary_symmetric_source(0.8)
    np.testing.assert_allclose(src.table, [[0.4, 0.1], [0.1, 0.4]], atol=1e-15)
    np.testing.assert_allclose(src.marginal(0).probs, [0.5, 0.5])
    np.testing.assert_allclose(src.conditional(0).matrix, [[0.8, 0.2], [0.2, 0.8]])


def test_channel_composition():
    a = ConditionalDistribution.bsc(0.1)
    b = ConditionalDistribution.bsc(0.2)
    c = a.then(b)
    assert c.matrix[0, 1] == pytest.approx(0.1 * 0.8 + 0.9 * 0.2)


def test_instance_defaults_and_validation():
    inst = PutInstance(binary_symmetric_source(0.8), ConditionalDistribution.bsc(0.2), 2.0, 0.3)
    assert inst.z_size == 2
    assert inst.replace(leak=0.5).leak == 0.5
    with pytest.raises(ValueError):
        inst.replace(tau=-1.0)


def test_density_moments_bsc():
    i, v, t = density_moments([0.5, 0.5], ConditionalDistribution.bsc(0.1))
    hi, lo = math.log(1.8), math.log(0.2)
    mean = 0.9 * hi + 0.1 * lo
    assert i == pytest.approx(mean, abs=1e-14)
    assert v == pytest.approx(0.9 * (hi - mean) ** 2 + 0.1 * (lo - mean) ** 2, abs=1e-13)
    assert t == pytest.approx(0.9 * abs(hi - mean) ** 3 + 0.1 * abs(lo - mean) ** 3, abs=1e-13)


def test_density_moments_constant():
    # the identity mechanism on a uniform source has a constant density log 3
    i, v, t = density_moments(np.full(3, 1 / 3), np.eye(3))
    assert i == pytest.approx(math.log(3))
    assert v == 0.0 and t == 0.0


@settings(max_examples=200, deadline=None)
@given(_pair())
def test_kl_nonnegative_and_pinsker(pq):
    p, q = pq
    d = kl_divergence(p, q)
    assert d >= 0.0
    assert d >= 0.5 * total_variation(p, q) ** 2 - 1e-12


@settings(max_examples=100, deadline=None)
@given(_simplex())
def test_entropy_bounds(p):
    assert -1e-15 <= entropy(p) <= math.log(len(p)) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 4).flatmap(lambda n: st.tuples(_simplex(n, n), _channel(n, 3))))
def test_mutual_information_identity(args):
    # I(X;Y) = H(Y) - H(Y|X)
    p, w = args
    h_cond = sum(p[i] * entropy(w[i]) for i in range(len(p)))
    assert mutual_information(p, w) == pytest.approx(entropy(p @ w) - h_cond, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 4).flatmap(lambda n: st.tuples(_simplex(n, n), _channel(n, 3))))
def test_density_mean_is_mutual_information(args):
    p, w = args
    table = information_density_table(p, w)
    assert table.mean() == pytest.approx(mutual_information(p, w), abs=1e-10)
    assert density_moments(p, w)[0] == pytest.approx(mutual_information(p, w), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 3, 2), elements=st.floats(1e-3, 1.0)))
def test_marginal_consistency(t):
    j = JointDistribution(t / t.sum())
    np.testing.assert_allclose(j.marginal(0, 1).table.sum(1), j.marginal(0).probs, atol=1e-14)
    np.testing.assert_allclose(j.marginal(1, 2).table.sum(0), j.marginal(2).probs, atol=1e-14)
