"""Demand transform, compressed measurement matrix and the demand regressor.

A demand transform ``psi`` is ``n^2 x n`` with at most one nonzero per row,
in the column of that row's source node. It is often handier to carry only
the vector of per-row *fractions* (length ``n^2``); ``psi_from_fractions``
and ``fractions_from_psi`` convert between the two.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netmodel import od_sources, self_flow_mask


def demand_fractions(X, n, include_self=False):
    """Per-source destination fractions for one vector (``n^2``) or a ``T x n^2`` block.

    Sources with zero total demand get the uniform fallback.
    """
    X = np.asarray(X, dtype=float)
    if np.any(X < 0):
        raise ValueError("traffic must be nonnegative")
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != n * n:
        raise ValueError(f"expected {n * n} OD columns, got {X.shape[1]}")
    keep = np.ones(n * n, dtype=bool) if include_self else ~self_flow_mask(n)
    blocks = (X * keep).reshape(X.shape[0], n, n)
    totals = blocks.sum(axis=2, keepdims=True)
    uniform = keep.reshape(n, n) / keep.reshape(n, n).sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(totals > 0, blocks / np.where(totals > 0, totals, 1.0), uniform[None])
    frac = frac.reshape(X.shape[0], n * n)
    return frac[0] if single else frac


def psi_from_fractions(fractions, n):
    fractions = np.asarray(fractions, dtype=float)
    psi = np.zeros((n * n, n))
    psi[np.arange(n * n), od_sources(n)] = fractions
    return psi


def fractions_from_psi(psi):
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[1]
    check_psi_support(psi)
    return psi[np.arange(n * n), od_sources(n)].copy()


def check_psi_support(psi):
    """Raise if ``psi`` has a nonzero outside its row's source column."""
    psi = np.asarray(psi)
    n = psi.shape[1]
    if psi.shape != (n * n, n):
        raise ValueError(f"demand transform must be n^2 x n, got {psi.shape}")
    mask = np.ones_like(psi, dtype=bool)
    mask[np.arange(n * n), od_sources(n)] = False
    if np.any(psi[mask] != 0):
        raise ValueError("demand transform has entries outside the source column")


def build_psi(x, n, include_self=False):
    """Demand transform of one traffic vector.

    By default self flows are dropped from both numerator and denominator,
    so self rows stay zero; ``include_self=True`` keeps them (hot-potato data).
    """
    return psi_from_fractions(demand_fractions(x, n, include_self), n)


def build_phi(A, psi):
    A = np.asarray(A, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if A.shape[1] != psi.shape[0]:
        raise ValueError(f"routing has {A.shape[1]} columns but psi has {psi.shape[0]} rows")
    return A @ psi


@dataclass(frozen=True)
class DemandRegressor:
    """Affine map ``fractions = [1, y] @ beta`` with ``beta`` of shape ``(m+1, n^2)``."""

    beta: np.ndarray
    fitted: np.ndarray

    @property
    def n(self):
        return int(round(np.sqrt(self.beta.shape[1])))

    @property
    def m(self):
        return self.beta.shape[0] - 1

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "beta.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in self.beta:
                w.writerow(format(v, ".17g") for v in row)
        with open(directory / "fitted.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(int(v) for v in self.fitted)

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        beta = np.loadtxt(directory / "beta.csv", delimiter=",", ndmin=2)
        fitted = np.loadtxt(directory / "fitted.csv", delimiter=",", ndmin=1).astype(bool)
        if fitted.size != beta.shape[1]:
            raise ValueError("fitted.csv length does not match beta.csv columns")
        return cls(beta, fitted)


class TrainingError(ValueError):
    pass


def _huber_fit(Z, y, max_iter=50, c=1.345):
    """Single-column Huber IRLS (reference implementation for :func:`_huber_fit_all`)."""
    beta = np.linalg.lstsq(Z, y, rcond=None)[0]
    yscale = max(np.abs(y).max(), 1e-300)
    for _ in range(max_iter):
        r = y - Z @ beta
        sigma = np.median(np.abs(r - np.median(r))) / 0.6745
        if sigma <= 1e-12 * yscale:
            break
        w = np.minimum(1.0, c * sigma / np.maximum(np.abs(r), 1e-300))
        sw = np.sqrt(w)
        new = np.linalg.lstsq(Z * sw[:, None], y * sw, rcond=None)[0]
        done = np.abs(new - beta).max() <= 1e-10 * max(1.0, np.abs(beta).max())
        beta = new
        if done:
            break
    return beta


def _weighted_solve(Z, W, F):
    """Per-column weighted least squares, batched over the columns of ``F``."""
    ZW = W.T[:, :, None] * Z[None]
    G = ZW.transpose(0, 2, 1) @ Z
    rhs = (Z.T @ (W * F)).T
    out = np.empty((Z.shape[1], F.shape[1]))
    # the design is standardised, so a large condition number means real collinearity
    ok = np.linalg.cond(G) < 1e10
    if ok.any():
        out[:, ok] = np.linalg.solve(G[ok], rhs[ok][..., None])[..., 0].T
    for c in np.flatnonzero(~ok):
        sw = np.sqrt(W[:, c])
        out[:, c] = np.linalg.lstsq(Z * sw[:, None], F[:, c] * sw, rcond=None)[0]
    return out


def _huber_fit_all(Z, F, max_iter=50, c=1.345):
    """Huber IRLS for every column of ``F`` against a shared design ``Z``."""
    B = np.linalg.lstsq(Z, F, rcond=None)[0]
    yscale = np.maximum(np.abs(F).max(axis=0), 1e-300)
    active = np.arange(F.shape[1])
    for _ in range(max_iter):
        R = F[:, active] - Z @ B[:, active]
        sigma = np.median(np.abs(R - np.median(R, axis=0)), axis=0) / 0.6745
        keep = sigma > 1e-12 * yscale[active]
        active, R, sigma = active[keep], R[:, keep], sigma[keep]
        if active.size == 0:
            break
        W = np.minimum(1.0, c * sigma / np.maximum(np.abs(R), 1e-300))
        new = _weighted_solve(Z, W, F[:, active])
        old = B[:, active]
        done = np.abs(new - old).max(axis=0) <= 1e-10 * np.maximum(1.0, np.abs(old).max(axis=0))
        B[:, active] = new
        active = active[~done]
        if active.size == 0:
            break
    return B


def _standardise(Y):
    mu = Y.mean(axis=0)
    sd = Y.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return np.hstack([np.ones((Y.shape[0], 1)), (Y - mu) / sd]), mu, sd


def train_regressor(Y, fractions, include_self=False, robust=True):
    """Fit one affine predictor per potentially-nonzero demand-transform row.

    ``Y`` is ``T x m`` link loads, ``fractions`` the ``T x n^2`` matching
    demand fractions (see :func:`demand_fractions`). Fits use least squares,
    Huber-reweighted when ``robust``; with fewer samples than coefficients
    the minimum-norm least-squares solution is used instead.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    F = np.atleast_2d(np.asarray(fractions, dtype=float))
    T, m = Y.shape
    if F.shape[0] != T:
        raise TrainingError("link and demand series differ in length")
    if T < 2:
        raise TrainingError("need at least 2 training samples")
    n = int(round(np.sqrt(F.shape[1])))
    if n * n != F.shape[1]:
        raise TrainingError("fractions must have n^2 columns")
    Z = np.hstack([np.ones((T, 1)), Y])
    fitted = np.ones(n * n, dtype=bool) if include_self else ~self_flow_mask(n)
    beta = np.zeros((m + 1, n * n))
    cols = np.flatnonzero(fitted)
    if T < m + 1 or not robust:
        # plain least squares, minimum-norm when underdetermined
        beta[:, cols] = np.linalg.lstsq(Z, F[:, cols], rcond=None)[0]
    else:
        Zs, mu, sd = _standardise(Y)
        Bs = _huber_fit_all(Zs, F[:, cols])
        beta[1:, cols] = Bs[1:] / sd[:, None]
        beta[0, cols] = Bs[0] - mu @ beta[1:, cols]
    return DemandRegressor(beta, fitted)


def predict_fractions(reg, y_hat, renormalize=False):
    """Raw affine prediction clamped to ``[0, 1]``; unfitted rows are zero."""
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    if y_hat.size != reg.m or not np.all(np.isfinite(y_hat)):
        raise ValueError(f"y_hat must be a finite {reg.m}-vector")
    raw = reg.beta[0] + y_hat @ reg.beta[1:]
    frac = np.where(reg.fitted, np.clip(raw, 0.0, 1.0), 0.0)
    if renormalize:
        n = reg.n
        blocks = frac.reshape(n, n)
        sums = blocks.sum(axis=1, keepdims=True)
        blocks = np.where(sums > 0, blocks / np.where(sums > 0, sums, 1.0), blocks)
        frac = blocks.reshape(-1)
    return frac


def predict_psi(reg, y_hat, renormalize=False):
    return psi_from_fractions(predict_fractions(reg, y_hat, renormalize), reg.n)
