"""SVD, column-pivoted QR and covariance-weighted nonnegative least squares."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import _kernels

CONSTRAINT_MODES = ("none", "lower_bound", "equality")


def _as_finite_matrix(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


@dataclass(frozen=True)
class SvdResult:
    """Full decomposition ``M = U @ diag(S) @ V.T`` (``U`` square, ``V`` square)."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        k = self.S.size
        return (self.U[:, :k] * self.S) @ self.V[:, :k].T


def svd(M):
    """Full SVD with a deterministic sign convention.

    Each column of ``U`` is flipped so that its largest-magnitude entry is
    nonnegative; the matching column of ``V`` is flipped with it.
    """
    M = _as_finite_matrix(M)
    U, S, Vt = np.linalg.svd(M, full_matrices=True)
    V = Vt.T.copy()
    k = S.size
    cols = np.arange(U.shape[1])
    lead = U[np.argmax(np.abs(U), axis=0), cols]
    flip = np.where(lead < 0, -1.0, 1.0)
    U = U * flip
    V[:, :k] *= flip[:k]
    return SvdResult(U=U, S=S, V=V)


def numerical_rank(M, rtol=1e-10):
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class PivotedQr:
    """``M[:, pivot_order] = Q @ R`` with 0-based ``pivot_order``.

    ``chosen_norms[j]`` and ``runner_up_norms[j]`` record, for pivot step
    ``j``, the residual norm of the selected column and the largest residual
    norm among the columns not selected at that step.
    """

    Q: np.ndarray
    R: np.ndarray
    pivot_order: np.ndarray
    chosen_norms: np.ndarray
    runner_up_norms: np.ndarray


def qr_pivot(M, tie_rtol=1e-12):
    """Greedy max-residual-norm column pivoted QR (Householder).

    Ties (norms within ``tie_rtol`` relative of the maximum) go to the
    lowest original column index.
    """
    M = _as_finite_matrix(M)
    Q, R, perm, chosen, runner_up = _kernels.qr_pivot(np.ascontiguousarray(M), float(tie_rtol))
    return PivotedQr(Q=Q, R=R, pivot_order=perm.astype(np.intp),
                     chosen_norms=chosen, runner_up_norms=runner_up)


def covariance_weight(cov, eps=1e-6):
    """Inverse of ``cov + eps * trace(cov)/k * I``.

    A covariance with zero trace (every link constant) yields the identity.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    k = cov.shape[0]
    if cov.shape != (k, k):
        raise ValueError("covariance must be square")
    cov = 0.5 * (cov + cov.T)
    tr = np.trace(cov)
    if not np.isfinite(tr) or tr <= 0:
        return np.eye(k)
    reg = cov + eps * (tr / k) * np.eye(k)
    W = cho_solve(cho_factor(reg, lower=True), np.eye(k))
    return 0.5 * (W + W.T)


@dataclass
class CwlsProblem:
    """``min (t - D x)^T W (t - D x)`` over ``x >= 0`` plus optional row constraints.

    ``constraint_mode``: ``"none"``; ``"lower_bound"`` (``D x >= t``); or
    ``"equality"`` (``|D x - t| <= tolerance * (1 + |t|)`` componentwise).
    ``nonnegative=False`` drops the sign constraint (only with mode ``none``).
    """

    design: np.ndarray
    target: np.ndarray
    weight: np.ndarray = None
    constraint_mode: str = "lower_bound"
    start: np.ndarray = None
    tolerance: float = 1e-8
    max_iterations: int = 10_000
    nonnegative: bool = True


@dataclass(frozen=True)
class CwlsResult:
    """Solver output.

    ``objective_trace`` holds the half whitened objective after each
    active-set iteration of the sign-constrained phase.
    """

    solution: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool
    feasible: bool = True
    max_violation: float = 0.0
    objective: float = 0.0
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mode: str = "none"

    def __iter__(self):
        # allows ``x, kkt, iters = solve_cwls(p)``
        return iter((self.solution, self.kkt_residual, self.iterations))


def _check_problem(p):
    D = _as_finite_matrix(p.design, "design")
    k, n = D.shape
    if k < 1 or n < 1:
        raise ValueError("design must be at least 1x1")
    t = np.asarray(p.target, dtype=float).reshape(-1)
    if t.size != k or not np.all(np.isfinite(t)):
        raise ValueError(f"target must be a finite {k}-vector")
    if p.weight is None:
        W = np.eye(k)
    else:
        W = _as_finite_matrix(p.weight, "weight")
        if W.shape != (k, k):
            raise ValueError(f"weight must be {k}x{k}")
        if not np.allclose(W, W.T, rtol=1e-10, atol=1e-12 * np.abs(W).max()):
            raise ValueError("weight must be symmetric")
    if p.constraint_mode not in CONSTRAINT_MODES:
        raise ValueError(f"unknown constraint_mode {p.constraint_mode!r}")
    if not p.nonnegative and p.constraint_mode != "none":
        raise ValueError("sign-free solves only support constraint_mode='none'")
    if p.max_iterations < 1:
        raise ValueError("max_iterations must be positive")
    return D, t, W


def _whiten(D, t, W):
    k = D.shape[0]
    tr = np.trace(W)
    if tr <= 0:
        raise ValueError("weight must be positive definite")
    Wn = W * (k / tr)
    try:
        L = np.linalg.cholesky(0.5 * (Wn + Wn.T))
    except np.linalg.LinAlgError:
        raise ValueError("weight must be positive definite") from None
    return L.T @ D, L.T @ t


def _row_constraints(D, t, mode, tol):
    """Constraints ``G x >= h`` beyond ``x >= 0`` plus the tolerance used to judge them."""
    band = tol * (1.0 + np.abs(t))
    if mode == "lower_bound":
        return D, t, band
    if mode == "equality":
        half = 0.5 * band
        return np.vstack([D, -D]), np.concatenate([t - half, -t - half]), np.concatenate([band, band])
    return D[:0], t[:0], band[:0]


def _nonneg_kkt(w, x):
    """KKT residual for ``x >= 0`` given ``w = E^T (f - E x)``."""
    if x.size == 0:
        return 0.0
    pos = x > 0
    a = np.abs(w[pos]).max() if pos.any() else 0.0
    b = np.maximum(w[~pos], 0.0).max() if (~pos).any() else 0.0
    return float(max(a, b))


def _lsi(E, f, G, h, max_iter):
    """``min ||E x - f||`` s.t. ``G x >= h`` through the least-distance dual (NNLS).

    Returns ``None`` when the constraints are infeasible, otherwise
    ``(x, mu, iterations, E_used, f_used)`` where ``mu`` are the multipliers
    of the half objective.
    """
    k, n = E.shape
    scale = np.linalg.norm(E)
    need_ridge = k < n
    if not need_ridge:
        d = np.abs(np.diag(np.linalg.qr(E, mode="r")))
        need_ridge = d.min() <= 1e-10 * max(d.max(), 1e-300)
    if need_ridge:
        rho = 1e-7 * (scale / np.sqrt(n) if scale > 0 else 1.0)
        E = np.vstack([E, rho * np.eye(n)])
        f = np.concatenate([f, np.zeros(n)])
    Q, R = np.linalg.qr(E)
    g = Q.T @ f
    Gt = solve_triangular(R, G.T, trans="T").T
    ht = h - Gt @ g
    p = G.shape[0]
    Ep = np.ascontiguousarray(np.vstack([Gt.T, ht[None, :]]))
    fp = np.zeros(n + 1)
    fp[n] = 1.0
    dual_tol = 1e-13 * max(1.0, np.abs(Ep).max())
    u, _, it, _, _ = _kernels.nnls(Ep, fp, np.zeros(p), max_iter, dual_tol)
    r = Ep @ u - fp
    if -r[n] <= 1e-12:
        return None
    z = -r[:n] / r[n]
    x = solve_triangular(R, z + g)
    mu = u / (-r[n])
    return x, mu, it, E, f


def solve_cwls(p):
    """Solve a :class:`CwlsProblem`; deterministic for identical input.

    Infeasible row constraints are reported (``feasible=False`` plus the
    largest violation) with the sign-constrained unweighted-mode solution;
    callers decide whether to fall back.
    """
    D, t, W = _check_problem(p)
    k, n = D.shape
    E, f = _whiten(D, t, W)
    tol_abs = p.tolerance * (1.0 + np.linalg.norm(t))

    def _objective(x):
        r = t - D @ x
        return float(r @ W @ r)

    if not p.nonnegative:
        x = np.linalg.lstsq(E, f, rcond=None)[0]
        kkt = float(np.abs(E.T @ (E @ x - f)).max())
        return CwlsResult(x, kkt, 1, bool(kkt <= tol_abs), objective=_objective(x),
                          objective_trace=np.array([_objective(x)]), mode="none")

    x0 = np.zeros(n) if p.start is None else np.maximum(np.asarray(p.start, dtype=float).reshape(-1), 0.0)
    if x0.size != n:
        raise ValueError(f"start must be a {n}-vector")
    x, w, iters, _, trace = _kernels.nnls(np.ascontiguousarray(E), f, x0, int(p.max_iterations), tol_abs)
    x = np.maximum(x, 0.0)
    kkt = _nonneg_kkt(w, x)
    G, h, band = _row_constraints(D, t, p.constraint_mode, p.tolerance)

    def _violation(x):
        if G.shape[0] == 0:
            return 0.0
        return float(np.max(h - G @ x))

    def _infeasible(x):
        return G.shape[0] > 0 and np.any(h - G @ x > band)

    if G.shape[0] == 0 or not _infeasible(x):
        # optimal for the relaxation and feasible, hence optimal
        return CwlsResult(x, kkt, iters, bool(kkt <= tol_abs), True, max(_violation(x), 0.0),
                          _objective(x), trace, p.constraint_mode)

    Gfull = np.vstack([np.eye(n), G])
    hfull = np.concatenate([np.zeros(n), h])
    out = _lsi(E, f, Gfull, hfull, int(p.max_iterations))
    if out is None:
        return CwlsResult(x, kkt, iters, bool(kkt <= tol_abs), False, _violation(x),
                          _objective(x), trace, p.constraint_mode)
    xc, mu, it2, Eu, fu = out
    xc = np.maximum(xc, 0.0)
    slack = Gfull @ xc - hfull
    stat = np.abs(Eu.T @ (Eu @ xc - fu) - Gfull.T @ mu).max()
    comp = np.abs(mu * slack).max() / max(1.0, np.abs(xc).max())
    primal = max(0.0, -slack.min())
    kkt2 = float(max(stat, comp, primal))
    feasible = not bool(_infeasible(xc))
    obj = _objective(xc)
    return CwlsResult(xc, kkt2, iters + it2, bool(kkt2 <= tol_abs) and feasible, feasible,
                      max(_violation(xc), 0.0), obj, trace, p.constraint_mode)
