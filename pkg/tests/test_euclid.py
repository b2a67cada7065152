import itertools
import math

import numpy as np
import pytest
from scipy.linalg import null_space

from putkit.errors import DivisionBySupportZero, SingularWeight
from putkit.euclid import (
    PerturbationMatrix,
    alternate,
    chisq_leakage,
    euclid_put,
    euclid_put_noisy,
    h_quadratic,
    inner_j,
    l_quartic,
    perturbed_mechanism,
)

UNIFORM = np.array([0.5, 0.5])
RATE = 2 * 0.19274475702175742


@pytest.fixture(scope="module")
def general(example_source):
    return euclid_put(example_source, RATE, 0.01)


@pytest.fixture(scope="module")
def noisy(example_source):
    return euclid_put_noisy(example_source, 0.1)


def _check_feasible(pm, tol=1e-9):
    j = np.asarray(pm)
    assert np.abs(j).max() <= 1 + tol
    assert np.abs(j.sum(1)).max() <= tol
    assert np.abs(pm.base.probs @ j).max() <= tol


def test_perturbation_matrix_validation():
    PerturbationMatrix([[0.3, -0.3], [-0.3, 0.3]], UNIFORM)
    with pytest.raises(ValueError):
        PerturbationMatrix([[0.3, -0.2], [-0.3, 0.3]], UNIFORM)
    with pytest.raises(ValueError):
        PerturbationMatrix([[0.3, -0.3], [0.3, -0.3]], UNIFORM)
    with pytest.raises(ValueError):
        PerturbationMatrix([[1.5, -1.5], [-1.5, 1.5]], UNIFORM)
    assert np.all(np.asarray(PerturbationMatrix.zeros(UNIFORM, 3)) == 0)


def test_chisq_examples():
    a = 0.3
    j = np.array([[a, -a], [-a, a]])
    assert chisq_leakage(j, UNIFORM, UNIFORM) == pytest.approx(4 * a * a, abs=1e-15)
    assert chisq_leakage(2 * j, UNIFORM, UNIFORM) == pytest.approx(4 * chisq_leakage(j, UNIFORM, UNIFORM))
    assert chisq_leakage(np.zeros((2, 2)), UNIFORM, UNIFORM) == 0.0
    with pytest.raises(DivisionBySupportZero):
        chisq_leakage(j, UNIFORM, [1.0, 0.0])
    # a zero column on a dead Q_Z symbol is fine
    assert chisq_leakage(np.zeros((2, 2)), UNIFORM, [1.0, 0.0]) == 0.0


def test_h_examples(example_source):
    rng = np.random.default_rng(0)
    j = np.array([[0.2, -0.2], [-0.2, 0.2]])
    b = rng.dirichlet(np.ones(3), size=2)
    q = np.array([0.4, 0.6])
    h = h_quadratic(j, example_source, b, q, 0.1)
    assert h > 0
    assert h_quadratic(j, example_source, b, q, 0.2) == pytest.approx(4 * h, rel=1e-14)
    assert h_quadratic(np.zeros((2, 2)), example_source, b, q, 0.1) == 0.0
    same = np.tile(b[0], (2, 1))
    assert h_quadratic(j, example_source, same, q, 0.1) == pytest.approx(0.0, abs=1e-18)


def test_h_direct_expansion(example_source):
    # sum over (v, w) written out with explicit loops
    rng = np.random.default_rng(3)
    p = example_source.table
    j = np.array([[0.25, -0.25], [-0.25, 0.25]])
    b = rng.dirichlet(np.ones(3), size=2)
    q = np.array([0.3, 0.7])
    rho = 0.05
    p_v = p.sum(0)
    qbar = q @ b
    total = 0.0
    for v, w in itertools.product(range(2), range(3)):
        inner = sum(p[u, v] / p_v[v] * b[z, w] * j[u, z] for u in range(2) for z in range(2))
        total += p_v[v] / qbar[w] * inner ** 2
    assert h_quadratic(j, p, b, q, rho) == pytest.approx(rho ** 2 / 2 * total, rel=1e-13)


def test_singular_weight(example_source):
    j = np.array([[0.2, -0.2], [-0.2, 0.2]])
    b = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]])
    assert h_quadratic(j, example_source, b, UNIFORM, 0.1) == pytest.approx(0.0, abs=1e-18)
    theta = np.array([[0.1, -0.1, 0.0], [-0.1, 0.1, 0.0]])
    with pytest.raises(SingularWeight):
        l_quartic(j, theta, example_source, UNIFORM, [0.5, 0.0, 0.5], 0.1)


def test_l_rank_one_expansion(example_source):
    p = example_source.table
    a, t = 0.4, 0.3
    j = np.array([[a, -a], [-a, a]])
    theta = np.array([[t, -t, 0.0], [-t, t, 0.0]])
    q_w = np.array([0.25, 0.25, 0.5])
    rho = 0.2
    # P_U|V = [[.8,.2],[.2,.8]]: (P_U|V J)(v, .) = +-0.6 a (1, -1); times Theta gives +-1.2 a t (1, -1, 0)
    expected = rho ** 4 / 2 * sum(0.5 / q_w[w] * (1.2 * a * t) ** 2 for w in range(2)) * 2
    assert l_quartic(j, theta, p, UNIFORM, q_w, rho) == pytest.approx(expected, rel=1e-13)
    assert l_quartic(j, theta, p, UNIFORM, q_w, 2 * rho) == pytest.approx(16 * expected, rel=1e-13)
    assert l_quartic(np.zeros((2, 2)), theta, p, UNIFORM, q_w, rho) == 0.0


def _projected_ascent(p, q_z, b, rng, starts=32, iters=3000):
    """Reference for the inner J problem: gradient ascent on the chi-square sphere within the subspace."""
    p_u = p.sum(1)
    n = len(p_u) * len(q_z)
    cons = [np.kron(np.eye(len(p_u))[a], np.ones(len(q_z))) for a in range(len(p_u))]
    cons += [np.kron(p_u, np.eye(len(q_z))[c]) for c in range(len(q_z))]
    basis = null_space(np.array(cons))

    def form(x):
        return h_quadratic(x.reshape(len(p_u), -1), p, b, q_z, math.sqrt(2.0))

    # the form is quadratic, so its Hessian follows from polarization on the basis
    m = basis.shape[1]
    hess = np.empty((m, m))
    for i in range(m):
        for k in range(m):
            hess[i, k] = 0.5 * (form(basis[:, i] + basis[:, k]) - form(basis[:, i]) - form(basis[:, k]))
    metric = (p_u[:, None] / q_z[None, :]).ravel()
    gram = basis.T @ (metric[:, None] * basis)
    best = 0.0
    for _ in range(starts):
        y = rng.standard_normal(m)
        y /= math.sqrt(y @ gram @ y)
        # gradient taken in the chi-square metric, so fixed points are generalized eigenvectors
        step = 100.0 / max(np.abs(hess).max(), 1e-12)
        precond = np.linalg.solve(gram, hess)
        for _ in range(iters):
            y = y + step * precond @ y
            y /= math.sqrt(y @ gram @ y)
        best = max(best, float(y @ hess @ y))
    return best


@pytest.mark.parametrize("seed", range(4))
def test_inner_eigen_matches_projected_ascent(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(6)).reshape(3, 2)
    q_z = rng.dirichlet(np.ones(3))
    b = rng.dirichlet(np.ones(4), size=3)
    lam, j = inner_j(p, q_z, b)
    ref = _projected_ascent(p, q_z, b, rng)
    assert lam == pytest.approx(ref, abs=1e-6)
    assert chisq_leakage(j, p.sum(1), q_z) == pytest.approx(1.0, abs=1e-9)
    assert h_quadratic(j, p, b, q_z, math.sqrt(2.0)) == pytest.approx(lam, abs=1e-9)


def test_general_frozen(general):
    # frozen from a verified run: eigenvalue 0.36, so the value is 0.36 L
    leak = 0.01 ** 2 / 2
    assert general.trace["eigenvalue"] == pytest.approx(0.36, abs=1e-6)
    assert general.value == pytest.approx(0.36 * leak, rel=1e-6)
    assert general.trace["rate"] <= RATE + 1e-9


def test_general_feasibility_and_marginal(general, example_source):
    p_u = example_source.marginal(0).probs
    _check_feasible(general.best_j)
    assert chisq_leakage(general.best_j, p_u, general.best_qz) <= 1 + 1e-9
    mech = perturbed_mechanism(general.best_j, general.best_qz, general.rho)
    np.testing.assert_allclose(p_u @ mech, general.best_qz.probs, atol=1e-12)
    assert general.best_theta is None and general.aux_channel.n_out == 3


def test_general_scaling(example_source):
    leaks = np.array([1e-5, 1e-4, 1e-3])
    vals = [euclid_put(example_source, RATE, math.sqrt(2 * x), restarts=8).value for x in leaks]
    slope = np.polyfit(np.log(leaks), np.log(vals), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.05)


def test_alternation_monotone(example_source):
    rng = np.random.default_rng(4)
    q_z = rng.dirichlet(np.ones(2))
    q_w = rng.dirichlet(np.ones(3))
    theta0 = np.array([[0.3, -0.1, -0.2], [0.0, 0.0, 0.0]])
    theta0 -= (q_z @ theta0)[None, :]
    theta0 -= theta0.mean(1, keepdims=True)
    _, j, theta, hist = alternate(example_source, q_z, q_w, theta0)
    assert all(b >= a - 1e-12 for a, b in zip(hist, hist[1:]))


def test_noisy_frozen(noisy):
    leak = 0.1 ** 2 / 2
    assert noisy.trace["form_value"] == pytest.approx(0.36, abs=1e-6)
    assert noisy.value == pytest.approx(0.72 * leak ** 2, rel=1e-5)
    _check_feasible(noisy.best_j)
    _check_feasible(noisy.best_theta)
    p_u = np.array([0.5, 0.5])
    assert chisq_leakage(noisy.best_j, p_u, noisy.best_qz) <= 1 + 1e-9
    assert chisq_leakage(noisy.best_theta, noisy.best_qz, noisy.best_qw) <= 1 + 1e-9


def test_noisy_matches_dense_grid(noisy, example_source):
    # at the returned (Q_Z, Q_W), scan directions of J and Theta at step 1/50; the objective is
    # homogeneous in each, so every direction is pushed out to the box / chi-square boundary
    q_z, q_w = noisy.best_qz.probs, noisy.best_qw.probs
    p = example_source.table
    p_u = p.sum(1)
    p_v = p.sum(0)
    t_basis = null_space(np.vstack([np.kron(np.eye(2)[a], np.ones(3)) for a in range(2)]
                                   + [np.kron(q_z, np.eye(3)[c]) for c in range(3)]))
    grid = np.arange(-50, 51) / 50.0
    coef = np.array([(c1, c2) for c1, c2 in itertools.product(grid, grid) if c1 or c2])
    thetas = (coef @ t_basis.T).reshape(-1, 2, 3)
    box = np.abs(thetas).max(axis=(1, 2))
    chi = (q_z[None, :, None] * thetas ** 2 / q_w[None, None, :]).sum(axis=(1, 2))
    thetas *= np.minimum(1 / box, 1 / np.sqrt(chi))[:, None, None]

    unit = np.array([[1.0, -1.0], [-1.0, 1.0]])
    j = unit * min(1.0, 1 / math.sqrt(chisq_leakage(unit, p_u, q_z)))
    left = (p / p_v[None, :]).T @ j
    c = np.einsum("va,nab->nvb", left, thetas)
    vals = noisy.rho ** 4 / 2 * (p_v[None, :, None] * c ** 2 / q_w[None, None, :]).sum(axis=(1, 2))
    best = vals.max()
    assert best <= noisy.value * (1 + 1e-9)
    assert best == pytest.approx(noisy.value, rel=5e-3)


def test_noisy_scaling(example_source):
    leaks = np.array([1e-5, 1e-4, 1e-3])
    vals = [euclid_put_noisy(example_source, math.sqrt(2 * x), restarts=2, theta_starts=2).value for x in leaks]
    slope = np.polyfit(np.log(leaks), np.log(vals), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.05)


def test_rho_validation(example_source):
    with pytest.raises(ValueError):
        euclid_put(example_source, RATE, 1.5)
    with pytest.raises(ValueError):
        euclid_put_noisy(example_source, 0.0)
