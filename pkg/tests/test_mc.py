import math

import numpy as np
import pytest

from putkit.bound import berry_esseen_margin
from putkit.errors import VacuousBound
from putkit.mc import McConfig, empirical_leakage, sample_cells, simulate_density_tail
from putkit.prob import ConditionalDistribution, mutual_information

UNIFORM = [0.5, 0.5]


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(0, 10)
    with pytest.raises(ValueError):
        McConfig(10, 10, delta=1.0)
    with pytest.raises(ValueError):
        McConfig(10, 10, seed=-1)
    assert McConfig(10.0, 5).k == 10


def test_bsc_tail_frozen(bsc01):
    # frozen from a verified run; the threshold is k I + sqrt(k) margin
    rep = simulate_density_tail(UNIFORM, bsc01, McConfig(1000, 20_000, seed=0, delta=0.2))
    i = mutual_information(UNIFORM, bsc01)
    margin = berry_esseen_margin(UNIFORM, bsc01, 0.2, 1000)
    assert rep.threshold == pytest.approx(1000 * i + math.sqrt(1000) * margin, rel=1e-14)
    assert rep.threshold == pytest.approx(386.7045827926133, rel=1e-12)
    assert rep.passed
    assert abs(rep.empirical_tail - 0.2) < 0.03
    assert rep.exceedances == round(rep.empirical_tail * rep.n_blocks)


def test_seed_determinism(bsc01):
    cfg = McConfig(200, 3000, seed=7, delta=0.3)
    assert simulate_density_tail(UNIFORM, bsc01, cfg) == simulate_density_tail(UNIFORM, bsc01, cfg)
    other = simulate_density_tail(UNIFORM, bsc01, McConfig(200, 3000, seed=8, delta=0.3))
    assert other.exceedances != simulate_density_tail(UNIFORM, bsc01, cfg).exceedances


def test_thread_count_does_not_change_result(bsc01, monkeypatch):
    cfg = McConfig(100, 4500, seed=3, delta=0.3)
    monkeypatch.setenv("PUTKIT_THREADS", "1")
    a = simulate_density_tail(UNIFORM, bsc01, cfg)
    monkeypatch.setenv("PUTKIT_THREADS", "4")
    b = simulate_density_tail(UNIFORM, bsc01, cfg)
    assert a == b


def test_constant_density_never_exceeds():
    rep = simulate_density_tail(UNIFORM, np.eye(2), McConfig(50, 2000, delta=0.5))
    assert rep.exceedances == 0
    assert rep.threshold == pytest.approx(50 * math.log(2))
    rep = simulate_density_tail(UNIFORM, ConditionalDistribution.constant([0.3, 0.7], 2),
                                McConfig(50, 2000, delta=0.5))
    assert rep.exceedances == 0 and rep.threshold == 0.0


def test_vacuous_margin_raises(bsc01):
    with pytest.raises(VacuousBound) as info:
        simulate_density_tail(UNIFORM, bsc01, McConfig(1, 10, delta=0.01))
    assert info.value.kind == "low"


def test_sample_cells_boundaries():
    class Fixed:
        def __init__(self, u):
            self.u = np.asarray(u)

        def random(self, n):
            return self.u[:n]

    cdf = np.array([0.25, 0.25, 0.5, 1.0])
    # draws are 1 - u; a draw exactly on a step stays in the lower cell, the empty cell 1 is skipped
    idx = sample_cells(Fixed([0.75, 0.7501, 0.5, 0.0, 0.9999999]), cdf, 5)
    np.testing.assert_array_equal(idx, [0, 0, 2, 3, 0])


def test_sampler_frequencies():
    rng = np.random.default_rng(0)
    probs = np.array([0.1, 0.0, 0.6, 0.3])
    idx = sample_cells(rng, np.cumsum(probs), 200_000)
    freq = np.bincount(idx, minlength=4) / idx.size
    assert freq[1] == 0.0
    np.testing.assert_allclose(freq, probs, atol=5e-3)


def test_empirical_leakage_converges(bsc01):
    est = empirical_leakage(UNIFORM, bsc01, 1_000_000, seed=0)
    assert est == pytest.approx(mutual_information(UNIFORM, bsc01), abs=2e-3)
    assert est == empirical_leakage(UNIFORM, bsc01, 1_000_000, seed=0)
