import numpy as np
import pytest

from tomograph.baselines import (
    run_baseline,
    train_basis,
    train_cur_basis,
    train_pca_basis,
    train_pme_basis,
)
from tomograph.demand import build_psi, fractions_from_psi
from tomograph.estimator import EstimatorConfig, link_covariance
from tomograph.netmodel import gen_gravity_traffic, gen_topology


@pytest.fixture(scope="module")
def net():
    topo, A = gen_topology(2, 5, 2.6)
    X = gen_gravity_traffic(2, topo, 80).values
    return A, X


def pca_training_error(X, k):
    b = train_pca_basis(X, k, np.eye(X.shape[1]))
    C = X - b.mean
    return np.linalg.norm(C - C @ b.psi_static @ b.psi_static.T)


def test_pca_rank_one_reconstruction(net):
    A, _ = net
    rng = np.random.default_rng(0)
    v = rng.uniform(1, 2, 25)
    X = np.outer(rng.uniform(1, 5, 40), v)
    basis = train_pca_basis(X, 1, A)
    np.testing.assert_allclose(basis.phi_static, A @ basis.psi_static)
    x = 7.0 * v
    trace = run_baseline(basis, A, (A @ x)[None], np.zeros((A.shape[0],) * 2))
    np.testing.assert_allclose(trace.x_hat[0], x, rtol=1e-8)


def test_pca_complete_basis(net):
    _, X = net
    assert pca_training_error(X, 25) <= 1e-8 * np.linalg.norm(X)
    errs = [pca_training_error(X, k) for k in range(1, 26)]
    assert all(b <= a + 1e-9 * errs[0] for a, b in zip(errs, errs[1:]))
    with pytest.raises(ValueError):
        train_pca_basis(X, 0, np.eye(25))


def test_cur_axis_columns():
    X = np.zeros((3, 4))
    X[0, 0], X[1, 2], X[2, 3] = 5.0, 2.0, 1.0
    b = train_cur_basis(X, 3, np.eye(4))
    got = {tuple(c) for c in b.psi_static.T}
    assert got == {tuple(np.eye(4)[i]) for i in (0, 2, 3)}


def test_cur_all_and_duplicates(rng):
    X = rng.uniform(size=(6, 9))
    b = train_cur_basis(X, 6, np.eye(9))
    assert b.k == 6
    np.testing.assert_allclose(np.linalg.norm(b.psi_static, axis=0), 1)
    a, c = rng.uniform(size=(2, 9))
    D = np.vstack([a, a, c])
    b = train_cur_basis(D, 2, np.eye(9))
    cols = b.psi_static.T
    assert not np.allclose(cols[0], cols[1])
    with pytest.raises(ValueError):
        train_cur_basis(D, 4, np.eye(9))


def test_pme_basis(net):
    A, X = net
    b1 = train_pme_basis(X, A, seed=3)
    b2 = train_pme_basis(X, A, seed=3)
    np.testing.assert_array_equal(b1.psi_static, b2.psi_static)
    assert b1.psi_static.min() >= 0 and b1.psi_static.max() <= 1
    np.testing.assert_allclose(b1.psi_static.sum(axis=0), 1)
    fractions_from_psi(b1.psi_static)  # support check
    b0 = train_pme_basis(X, A, sigma_factor=0.0)
    np.testing.assert_allclose(b0.psi_static, build_psi(X.mean(axis=0), 5))
    with pytest.raises(ValueError):
        train_pme_basis(X, A, sigma_factor=-1)


def test_zero_links_zero_reconstruction(net):
    A, X = net
    cov = link_covariance(X @ A.T)
    for kind in ("cur", "pme"):
        b = train_basis(kind, X, A, k=5)
        tr = run_baseline(b, A, np.zeros((2, A.shape[0])), cov)
        np.testing.assert_array_equal(tr.x_hat, 0)


def test_shared_trace_shape(net):
    A, X = net
    cov = link_covariance(X @ A.T)
    Y = X[60:] @ A.T
    for kind in ("pca", "cur", "pme"):
        tr = run_baseline(train_basis(kind, X[:60], A, k=5), A, Y, cov, EstimatorConfig())
        assert tr.x_hat.shape == (20, 25)
        assert tr.x_hat.min() >= 0
    with pytest.raises(ValueError):
        train_basis("svd", X, A)
