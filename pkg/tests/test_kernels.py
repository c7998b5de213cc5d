
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simfsvgd.kernels import (
    CurlFreeKernel,
    IsotropicKernel,
    curlfree_divergence,
    curlfree_divergence_matrix,
    curlfree_divergence_radial,
    curlfree_eval,
    curlfree_eval_radial,
    eval_scalar,
    grad_x_scalar,
    gram_and_grad,
    kernel_matrix,
    median_heuristic,
)

FD_STEP = 1e-5


def fd_grad(f, x, h=FD_STEP):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f, x, h=FD_STEP):
    """J[..., i] = d f / d x_i."""
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_eval_scalar_examples():
    assert eval_scalar(IsotropicKernel("rbf", 1.0, 1.0), [0.3, -1.0], [0.3, -1.0]) == 1.0
    assert eval_scalar(IsotropicKernel("rbf", 2.0, 1.0), [1.0, 0.0], [0.0, 0.0]) == pytest.approx(2 * np.exp(-0.5))
    assert eval_scalar(IsotropicKernel("rbf", 2.0, 1.0), [1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.21306, abs=1e-5)
    assert eval_scalar(IsotropicKernel("imq", 1.0, 2.0), [2.0], [0.0]) == pytest.approx(0.70711, abs=1e-5)


def test_eval_scalar_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_scalar(IsotropicKernel(), [1.0, 2.0], [1.0])


@pytest.mark.parametrize("kw", [dict(variance=0.0), dict(lengthscale=-1.0), dict(family="matern")])
def test_kernel_validation(kw):
    with pytest.raises(ValueError):
        IsotropicKernel(**kw)


def test_grad_examples():
    k = IsotropicKernel("rbf", 1.0, 1.0)
    np.testing.assert_array_equal(grad_x_scalar(k, [1.0, 2.0], [1.0, 2.0]), [0.0, 0.0])
    np.testing.assert_allclose(grad_x_scalar(k, [1.0, 0.0], [0.0, 0.0]), [-np.exp(-0.5), 0.0], rtol=1e-14)


@pytest.mark.parametrize("family", ["rbf", "imq"])
@pytest.mark.parametrize("d", [1, 2, 6])
def test_grad_matches_finite_differences(family, d):
    rng = np.random.default_rng(d)
    for _ in range(100):
        k = IsotropicKernel(family, rng.uniform(0.5, 2), rng.uniform(0.5, 2))
        x, y = rng.normal(size=d), rng.normal(size=d)
        g = grad_x_scalar(k, x, y)
        assert rel_err(g, fd_grad(lambda z: eval_scalar(k, z, y), x)) <= 1e-6
        # antisymmetry under argument swap
        np.testing.assert_allclose(grad_x_scalar(k, y, x), -g, rtol=1e-12, atol=1e-15)


def test_gram_and_grad_consistent_with_pointwise():
    rng = np.random.default_rng(0)
    k = IsotropicKernel("imq", 1.3, 0.7)
    X, Y = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    K, G = gram_and_grad(k, X, Y)
    for i in range(4):
        for j in range(5):
            assert K[i, j] == pytest.approx(eval_scalar(k, X[i], Y[j]), rel=1e-12)
            np.testing.assert_allclose(G[i, j], grad_x_scalar(k, X[i], Y[j]), rtol=1e-12)


def test_curlfree_at_origin_is_scaled_identity():
    K = CurlFreeKernel(IsotropicKernel("rbf", 1.0, 1.0), 3)
    np.testing.assert_allclose(curlfree_eval(K, np.ones(3), np.ones(3)), np.eye(3))
    K2 = CurlFreeKernel(IsotropicKernel("rbf", 2.0, 0.5), 2)
    np.testing.assert_allclose(curlfree_eval(K2, np.zeros(2), np.zeros(2)), 2.0 / 0.25 * np.eye(2))


def test_curlfree_rejects_imq():
    with pytest.raises(ValueError):
        CurlFreeKernel(IsotropicKernel("imq"), 2)


def phi(k, r):
    return eval_scalar(k, r, np.zeros_like(r))


@pytest.mark.parametrize("d", [1, 2, 3, 6])
def test_curlfree_matches_fd_hessian(d):
    rng = np.random.default_rng(10 + d)
    for _ in range(20):
        base = IsotropicKernel("rbf", rng.uniform(0.5, 2), rng.uniform(0.5, 2))
        K = CurlFreeKernel(base, d)
        x, y = rng.normal(size=d), rng.normal(size=d)
        # Hessian of phi at r = x - y via FD of the analytic gradient
        r = x - y
        H = fd_jacobian(lambda z: grad_x_scalar(base, z, np.zeros(d)), r)
        M = curlfree_eval(K, x, y)
        np.testing.assert_allclose(M, -H, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(M, M.T, atol=1e-15)
        np.testing.assert_allclose(curlfree_eval(K, y, x), M.T, atol=1e-15)
        np.testing.assert_allclose(curlfree_eval_radial(K, x, y), M, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("d", [1, 2, 6])
def test_curlfree_divergence_matches_fd(d):
    rng = np.random.default_rng(20 + d)
    for _ in range(100):
        K = CurlFreeKernel(IsotropicKernel("rbf", rng.uniform(0.5, 2), rng.uniform(0.5, 2)), d)
        x, y = rng.normal(size=d), rng.normal(size=d)
        J = fd_jacobian(lambda z: curlfree_eval(K, z, y), x)  # J[a, b, i] = d K_ab / d x_i
        fd_div = np.einsum("aba->b", J)  # sum_a d K_ab / d x_a (column divergence)
        div = curlfree_divergence(K, x, y)
        assert rel_err(div, fd_div) <= 1e-4
        np.testing.assert_allclose(curlfree_divergence_radial(K, x, y), div, rtol=1e-9, atol=1e-12)


def test_curlfree_divergence_examples():
    K = CurlFreeKernel(IsotropicKernel("rbf", 1.0, 1.0), 2)
    np.testing.assert_array_equal(curlfree_divergence(K, [0.5, 0.5], [0.5, 0.5]), [0.0, 0.0])
    K1 = CurlFreeKernel(IsotropicKernel("rbf", 1.0, 1.0), 1)
    # rho(s) = exp(-s/2): rho'' = e/4, rho''' = -e/8 at s = 1
    e = np.exp(-0.5)
    expected = -4 * (3 * e / 4 + 2 * (-e / 8)) * 1.0
    np.testing.assert_allclose(curlfree_divergence(K1, [1.0], [0.0]), [expected], rtol=1e-14)


@pytest.mark.parametrize("d", [2, 3])
def test_curlfree_columns_have_zero_curl(d):
    rng = np.random.default_rng(30 + d)
    for _ in range(20):
        K = CurlFreeKernel(IsotropicKernel("rbf", 1.0, rng.uniform(0.5, 2)), d)
        x, y = rng.normal(size=d), rng.normal(size=d)
        J = fd_jacobian(lambda z: curlfree_eval(K, z, y), x)  # J[a, j, b] = d K_aj / d x_b
        for j in range(d):
            Dj = J[:, j, :]
            assert np.max(np.abs(Dj - Dj.T)) <= 1e-4


def test_divergence_matrix_matches_pointwise():
    rng = np.random.default_rng(1)
    K = CurlFreeKernel(IsotropicKernel("rbf", 1.5, 0.8), 3)
    X, Y = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
    D = curlfree_divergence_matrix(K, X, Y)
    G = kernel_matrix(K, X, Y)
    for i in range(4):
        for j in range(6):
            np.testing.assert_allclose(D[i, j], curlfree_divergence(K, X[i], Y[j]), rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(G[3 * i:3 * i + 3, 3 * j:3 * j + 3], curlfree_eval(K, X[i], Y[j]), rtol=1e-12, atol=1e-14)


def test_kernel_matrix_examples():
    k = IsotropicKernel("rbf", 1.0, 1.0)
    np.testing.assert_array_equal(kernel_matrix(k, [[0.2, 0.1]]), [[1.0]])
    np.testing.assert_allclose(kernel_matrix(k, [[1.0, 2.0], [1.0, 2.0]]), np.ones((2, 2)))
    rng = np.random.default_rng(3)
    assert np.linalg.eigvalsh(kernel_matrix(k, rng.normal(size=(10, 2)))).min() >= -1e-10
    with pytest.raises(ValueError):
        kernel_matrix(k, np.zeros((0, 2)))


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    n=st.integers(1, 12),
    d=st.integers(1, 4),
    family=st.sampled_from(["rbf", "imq", "curlfree"]),
    ls=st.floats(0.1, 5.0),
)
def test_gram_symmetric_psd(seed, n, d, family, ls):
    X = np.random.default_rng(seed).normal(size=(n, d))
    base = IsotropicKernel("rbf" if family == "curlfree" else family, 1.0, ls)
    k = CurlFreeKernel(base, d) if family == "curlfree" else base
    G = kernel_matrix(k, X)
    np.testing.assert_allclose(G, G.T, atol=1e-12)
    ev = np.linalg.eigvalsh(G)
    assert ev.min() >= -1e-8 * max(ev.max(), 1e-300)


def test_median_heuristic():
    assert median_heuristic([[0.0], [1.0]]) == 1.0
    assert median_heuristic(np.array([0.0, 1.0, 3.0])) == 2.0
    with pytest.warns(RuntimeWarning):
        assert median_heuristic(np.zeros((5, 2))) == 1.0
    with pytest.raises(ValueError):
        median_heuristic([[1.0]])
