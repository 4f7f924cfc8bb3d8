"""Static-basis comparison schemes: PCA, CUR and the fixed probability model (PME).

All three monitor every link and solve against a fixed compressed matrix
``phi_static = A @ psi_static`` with the same weighted solver the estimator
uses.
"""

from dataclasses import dataclass

import numpy as np

from .demand import build_psi
from .estimator import EstimatorConfig, RunTrace, StepResult, solve_step
from .numerics import CwlsProblem, covariance_weight, qr_pivot, solve_cwls, svd
from .subset import LinkSelection

KINDS = ("pca", "cur", "pme")


@dataclass(frozen=True)
class StaticBasis:
    kind: str
    psi_static: np.ndarray
    phi_static: np.ndarray
    mean: np.ndarray = None  # pca only

    @property
    def k(self):
        return self.psi_static.shape[1]

    def reconstruct(self, coeff):
        x = self.psi_static @ coeff
        if self.mean is not None:
            x = x + self.mean
        return x


def _train_matrix(X_train):
    X = np.atleast_2d(np.asarray(getattr(X_train, "values", X_train), dtype=float))
    return X.T  # n^2 x T, one snapshot per column


def train_pca_basis(X_train, k, A):
    """Top-``k`` principal directions of the time-centred training traffic."""
    M = _train_matrix(X_train)
    if not 1 <= k <= min(M.shape):
        raise ValueError(f"k must be in 1..{min(M.shape)}")
    mean = M.mean(axis=1)
    U = svd(M - mean[:, None]).U[:, :k]
    return StaticBasis("pca", U, np.asarray(A, float) @ U, mean)


def train_cur_basis(X_train, k, A):
    """``k`` training snapshots picked by pivoted QR on the top-``k`` right singular vectors."""
    M = _train_matrix(X_train)
    T = M.shape[1]
    if not 1 <= k <= T:
        raise ValueError(f"k must be in 1..{T}")
    V = svd(M).V[:, :k]
    cols = qr_pivot(V.T).pivot_order[:k]
    C = M[:, cols]
    norms = np.linalg.norm(C, axis=0)
    C = C / np.where(norms > 0, norms, 1.0)
    return StaticBasis("cur", C, np.asarray(A, float) @ C)


def train_pme_basis(X_train, A, sigma_factor=0.4, seed=0, include_self=False):
    """Demand transform of one noisy draw around the training OD means."""
    if sigma_factor < 0:
        raise ValueError("sigma_factor must be nonnegative")
    M = _train_matrix(X_train)
    n = int(round(np.sqrt(M.shape[0])))
    mu = M.mean(axis=1)
    rng = np.random.default_rng(seed)
    draw = np.maximum(rng.normal(mu, sigma_factor * mu), 0.0)
    psi = build_psi(draw, n, include_self)
    return StaticBasis("pme", psi, np.asarray(A, float) @ psi)


def train_basis(kind, X_train, A, k=None, sigma_factor=0.4, seed=0):
    if kind == "pca":
        return train_pca_basis(X_train, k, A)
    if kind == "cur":
        return train_cur_basis(X_train, k, A)
    if kind == "pme":
        return train_pme_basis(X_train, A, sigma_factor, seed)
    raise ValueError(f"unknown baseline {kind!r}")


def run_baseline(basis, A, Y_test, link_cov, config=EstimatorConfig()):
    """Per-timestamp static-basis solves with every link monitored."""
    Y = np.atleast_2d(np.asarray(getattr(Y_test, "values", Y_test), dtype=float))
    m = Y.shape[1]
    if basis.phi_static.shape[0] != m:
        raise ValueError("basis and link loads disagree on m")
    sel = LinkSelection.all_links(m)
    weight = covariance_weight(link_cov, config.weight_eps)
    offset = np.asarray(A, float) @ basis.mean if basis.mean is not None else np.zeros(m)
    steps = []
    for y in Y:
        if basis.kind == "pme":
            res = solve_step(basis.phi_static, y, link_cov, config)
        else:
            res = solve_cwls(CwlsProblem(basis.phi_static, y - offset, weight, "none",
                                         tolerance=config.tolerance,
                                         max_iterations=config.max_iterations,
                                         nonnegative=False))
        coeff = res.solution
        x_hat = np.maximum(basis.reconstruct(coeff), 0.0)
        y_hat = basis.phi_static @ coeff + offset
        steps.append(StepResult(x_hat, coeff, y_hat, sel, res.iterations, res.kkt_residual,
                                res.converged, res.feasible, res.mode))
    return RunTrace(steps)
