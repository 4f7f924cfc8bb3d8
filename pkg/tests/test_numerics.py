import itertools

import numpy as np
import pytest
import scipy.linalg
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tomograph.netmodel import TOY_ROUTING
from tomograph.numerics import (
    CwlsProblem,
    covariance_weight,
    numerical_rank,
    qr_pivot,
    solve_cwls,
    svd,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_svd_examples():
    np.testing.assert_allclose(svd(np.eye(3)).S, [1, 1, 1])
    np.testing.assert_allclose(svd(np.diag([3.0, 1.0])).S, [3, 1])
    s = svd(TOY_ROUTING).S
    assert s.size == 4 and s.min() > 1e-10 * s.max()


def test_svd_rejects_nonfinite():
    with pytest.raises(ValueError):
        svd(np.array([[1.0, np.nan]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 80), st.integers(1, 600), st.integers(0, 2**31 - 1))
def test_svd_reconstruction_and_orthogonality(m, n, seed):
    M = np.random.default_rng(seed).normal(size=(m, n))
    r = svd(M)
    assert np.abs(r.U.T @ r.U - np.eye(m)).max() <= 1e-10
    assert np.abs(r.V.T @ r.V - np.eye(n)).max() <= 1e-10
    assert np.all(np.diff(r.S) <= 0)
    scale = max(np.abs(M).max(), 1e-300)
    assert np.abs(r.reconstruct() - M).max() <= 1e-10 * scale
    lead = r.U[np.argmax(np.abs(r.U), axis=0), np.arange(m)]
    assert np.all(lead >= 0)


def test_svd_deterministic(rng):
    M = rng.normal(size=(7, 5))
    a, b = svd(M), svd(M.copy())
    np.testing.assert_array_equal(a.U, b.U)
    np.testing.assert_array_equal(a.V, b.V)


def test_numerical_rank():
    assert numerical_rank(np.zeros((3, 3))) == 0
    assert numerical_rank(np.outer([1, 2, 3], [1, 1])) == 1


def test_qr_pivot_examples():
    np.testing.assert_array_equal(qr_pivot(np.eye(2)).pivot_order, [0, 1])
    assert qr_pivot(np.array([[0.0, 2.0], [0.0, 0.0]])).pivot_order[0] == 1


def _greedy_oracle(M):
    """Independent greedy pivoting by explicit projection (Gram-Schmidt)."""
    M = M.astype(float)
    k, m = M.shape
    chosen, basis = [], np.zeros((k, 0))
    for _ in range(min(k, m)):
        resid = M - basis @ (basis.T @ M)
        norms = np.linalg.norm(resid, axis=0)
        norms[chosen] = -1
        j = int(np.argmax(norms))
        chosen.append(j)
        q = resid[:, j] / norms[j]
        basis = np.hstack([basis, q[:, None]])
    return chosen


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 14), st.integers(0, 2**31 - 1))
def test_qr_pivot_properties(k, m, seed):
    M = np.random.default_rng(seed).normal(size=(k, m))
    r = qr_pivot(M)
    order = r.pivot_order
    assert sorted(order) == list(range(m))
    np.testing.assert_allclose(M[:, order], r.Q @ r.R, atol=1e-10 * max(1, np.abs(M).max()))
    np.testing.assert_allclose(r.Q.T @ r.Q, np.eye(r.Q.shape[1]), atol=1e-10)
    assert np.allclose(np.tril(r.R, -1), 0, atol=1e-12)
    d = np.abs(np.diag(r.R))
    assert np.all(d[:-1] >= d[1:] - 1e-10)
    steps = min(k, m)
    assert list(order[:steps]) == _greedy_oracle(M)
    # greedy certificate: the chosen residual norm dominates the runner-up at every step
    assert np.all(r.chosen_norms[:steps] >= r.runner_up_norms[:steps] - 1e-12)
    # re-factoring the permuted matrix without pivoting reproduces R up to row signs
    R2 = np.linalg.qr(M[:, order], mode="r")
    rows = min(R2.shape[0], r.R.shape[0])
    np.testing.assert_allclose(np.abs(R2[:rows]), np.abs(r.R[:rows]), atol=1e-9)


def test_qr_pivot_matches_scipy_on_generic_input(rng):
    for _ in range(50):
        M = rng.normal(size=(6, 11))
        _, _, p = scipy.linalg.qr(M, pivoting=True)
        np.testing.assert_array_equal(qr_pivot(M).pivot_order[:6], p[:6])


def test_qr_pivot_tie_goes_to_lowest_index():
    M = np.array([[1.0, 0, 1], [0, 1, 0]])
    assert list(qr_pivot(M).pivot_order) == [0, 1, 2]


def test_covariance_weight():
    np.testing.assert_array_equal(covariance_weight(np.zeros((3, 3))), np.eye(3))
    C = np.array([[2.0, 0.5], [0.5, 1.0]])
    W = covariance_weight(C, eps=0)
    np.testing.assert_allclose(W @ C, np.eye(2), atol=1e-12)
    sing = np.ones((2, 2))
    W = covariance_weight(sing)
    assert np.all(np.linalg.eigvalsh(W) > 0)


def test_cwls_examples(toy_phi):
    x = solve_cwls(CwlsProblem(np.eye(2), [2, 3], np.eye(2), "none")).solution
    np.testing.assert_allclose(x, [2, 3])
    x = solve_cwls(CwlsProblem(np.array([[1.0]]), [-1.0], None, "none")).solution
    np.testing.assert_array_equal(x, [0.0])
    for mode in ("none", "lower_bound", "equality"):
        res = solve_cwls(CwlsProblem(toy_phi, [10, 12, 9, 10], np.eye(4), mode))
        np.testing.assert_allclose(res.solution, [10, 10, 10], rtol=1e-9)
        assert res.converged and res.feasible
    x, kkt, iters = solve_cwls(CwlsProblem(toy_phi, [10, 12, 9, 10], None, "none"))
    assert kkt <= 1e-8 * (1 + np.linalg.norm([10, 12, 9, 10]))


def test_cwls_validation():
    with pytest.raises(ValueError):
        solve_cwls(CwlsProblem(np.eye(2), [1.0], None, "none"))
    with pytest.raises(ValueError):
        solve_cwls(CwlsProblem(np.eye(2), [1.0, 2.0], None, "sideways"))
    with pytest.raises(ValueError):
        solve_cwls(CwlsProblem(np.eye(2), [1.0, 2.0], -np.eye(2), "none"))


def _whitened(D, t, W):
    L = np.linalg.cholesky(W)
    return L.T @ D, L.T @ t


def _brute_force_nnls(E, f):
    """Minimum over all 2^n supports of the unconstrained solve restricted to that support."""
    n = E.shape[1]
    best, best_x = np.inf, None
    for r in range(n + 1):
        for supp in itertools.combinations(range(n), r):
            x = np.zeros(n)
            if supp:
                z = np.linalg.lstsq(E[:, supp], f, rcond=None)[0]
                if np.any(z < 0):
                    continue
                x[list(supp)] = z
            val = np.sum((E @ x - f) ** 2)
            if val < best:
                best, best_x = val, x
    return best, best_x


def random_problem(rng, n=None):
    n = n or int(rng.integers(1, 9))
    k = int(rng.integers(n, n + 6))
    D = rng.normal(size=(k, n))
    t = rng.normal(size=k) * 3
    B = rng.normal(size=(k, k))
    W = B @ B.T + 0.5 * np.eye(k)
    return D, t, W


def test_cwls_none_matches_brute_force(rng):
    for _ in range(100):
        D, t, W = random_problem(rng)
        res = solve_cwls(CwlsProblem(D, t, W, "none"))
        E, f = _whitened(D, t, W / np.trace(W) * len(t))
        best, _ = _brute_force_nnls(E, f)
        ours = np.sum((E @ res.solution - f) ** 2)
        assert ours - best <= 1e-8 * max(1.0, best)
        assert res.solution.min() >= 0


def test_cwls_none_matches_scipy_nnls(rng):
    for _ in range(100):
        D, t, _ = random_problem(rng)
        res = solve_cwls(CwlsProblem(D, t, None, "none"))
        ref, _ = scipy.optimize.nnls(D, t)
        np.testing.assert_allclose(res.solution, ref, atol=1e-8 * (1 + np.abs(ref).max()))


def test_cwls_objective_trace_monotone(rng):
    for _ in range(50):
        D, t, W = random_problem(rng, n=8)
        tr = solve_cwls(CwlsProblem(D, t, W, "none")).objective_trace
        assert np.all(np.diff(tr) <= 1e-12 * (1 + np.abs(tr).max()))


def test_cwls_lower_bound_against_slsqp(rng):
    count = 0
    while count < 40:
        n = int(rng.integers(1, 6))
        k = n + int(rng.integers(0, 4))
        D = rng.uniform(0, 1, size=(k, n))
        t = D @ rng.uniform(0, 5, n) + rng.normal(0, 0.5, k)
        res = solve_cwls(CwlsProblem(D, t, None, "lower_bound"))
        if not res.feasible:
            continue
        count += 1
        assert np.all(D @ res.solution >= t - 1e-8 * (1 + np.abs(t)))
        ref = scipy.optimize.minimize(
            lambda x: np.sum((D @ x - t) ** 2), np.full(n, 5.0), method="SLSQP",
            bounds=[(0, None)] * n,
            constraints=[{"type": "ineq", "fun": lambda x: D @ x - t, "jac": lambda x: D}],
            options={"ftol": 1e-14, "maxiter": 500})
        ours = np.sum((D @ res.solution - t) ** 2)
        assert ours <= ref.fun + 1e-6 * (1 + ref.fun)


def test_cwls_lower_bound_infeasible():
    # 1 x >= 1 and -x >= 1 cannot both hold
    D = np.array([[1.0], [-1.0]])
    res = solve_cwls(CwlsProblem(D, [1.0, 1.0], None, "lower_bound"))
    assert not res.feasible
    assert res.max_violation > 0.5


def test_cwls_equality_band_and_infeasible(rng):
    D = rng.uniform(0.1, 1, size=(3, 3))
    x0 = rng.uniform(1, 2, 3)
    t = D @ x0
    res = solve_cwls(CwlsProblem(D, t, None, "equality"))
    assert res.feasible
    assert np.all(np.abs(D @ res.solution - t) <= 1e-8 * (1 + np.abs(t)))
    D2 = np.vstack([D, D[0]])
    res = solve_cwls(CwlsProblem(D2, np.append(t, t[0] + 5), None, "equality"))
    assert not res.feasible


def test_cwls_signed_mode(rng):
    D = rng.normal(size=(6, 3))
    t = rng.normal(size=6)
    res = solve_cwls(CwlsProblem(D, t, None, "none", nonnegative=False))
    np.testing.assert_allclose(res.solution, np.linalg.lstsq(D, t, rcond=None)[0], atol=1e-10)
    with pytest.raises(ValueError):
        solve_cwls(CwlsProblem(D, t, None, "lower_bound", nonnegative=False))


def test_cwls_deterministic_and_warm_start_invariant(rng):
    D, t, W = random_problem(rng, n=6)
    a = solve_cwls(CwlsProblem(D, t, W, "none")).solution
    b = solve_cwls(CwlsProblem(D, t, W, "none")).solution
    np.testing.assert_array_equal(a, b)
    c = solve_cwls(CwlsProblem(D, t, W, "none", start=np.abs(rng.normal(size=6)))).solution
    np.testing.assert_allclose(a, c, atol=1e-8 * (1 + np.abs(a).max()))


def test_cwls_iteration_cap_flags(rng):
    D, t, W = random_problem(rng, n=8)
    res = solve_cwls(CwlsProblem(D, t, W, "none", max_iterations=1))
    assert res.iterations <= 1
    assert res.solution.min() >= 0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 3), elements=finite), arrays(np.float64, 5, elements=finite))
def test_cwls_kkt_conditions(D, t):
    res = solve_cwls(CwlsProblem(D, t, None, "none"))
    x = res.solution
    g = D.T @ (D @ x - t)
    scale = 1 + np.abs(D).max() * (np.abs(t).max() + np.abs(D).max() * np.abs(x).max())
    assert x.min() >= 0
    # stationarity on the support, dual feasibility off it
    assert np.all(np.abs(g[x > 0]) <= 1e-7 * scale)
    assert np.all(g[x == 0] >= -1e-7 * scale)
