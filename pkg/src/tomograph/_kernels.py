"""Hot numeric kernels.

Each kernel is written once in numba-compatible numpy. When numba is
importable and ``TOMOGRAPH_NUMBA`` is not set to ``0`` the exported names are
``njit``-compiled versions; otherwise they are the plain Python functions.
The uncompiled originals stay available as ``py_*`` so both paths can be
tested and benchmarked side by side.
"""

import os
import types

import numpy as np

_FLAG = os.environ.get("TOMOGRAPH_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "no", "off")

try:
    if not _WANT_NUMBA:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def py_qr_pivot(M, tie_rtol):
    """Householder QR with greedy column pivoting.

    Returns ``(Q, R, perm, chosen, runner_up)`` where ``M[:, perm] = Q @ R``.
    ``chosen[j]`` is the residual norm of the column picked at step ``j`` and
    ``runner_up[j]`` the largest residual norm among the columns left behind.
    Among columns whose residual norm is within ``tie_rtol`` of the maximum the
    one with the lowest original index wins.
    """
    k, m = M.shape
    R = M.copy()
    Q = np.eye(k)
    perm = np.arange(m)
    steps = min(k, m)
    chosen = np.zeros(steps)
    runner_up = np.zeros(steps)
    norms = np.zeros(m)
    for j in range(steps):
        for c in range(j, m):
            acc = 0.0
            for r in range(j, k):
                acc += R[r, c] * R[r, c]
            norms[c] = np.sqrt(acc)
        mx = 0.0
        for c in range(j, m):
            if norms[c] > mx:
                mx = norms[c]
        cutoff = mx * (1.0 - tie_rtol)
        p = -1
        for c in range(j, m):
            if norms[c] >= cutoff:
                if p < 0 or perm[c] < perm[p]:
                    p = c
        chosen[j] = norms[p]
        second = 0.0
        for c in range(j, m):
            if c != p and norms[c] > second:
                second = norms[c]
        runner_up[j] = second
        if p != j:
            for r in range(k):
                tmp = R[r, j]
                R[r, j] = R[r, p]
                R[r, p] = tmp
            tmpi = perm[j]
            perm[j] = perm[p]
            perm[p] = tmpi
            tmpn = norms[j]
            norms[j] = norms[p]
            norms[p] = tmpn
        alpha = norms[j]
        if alpha == 0.0 or j == k - 1:
            continue
        # reflector v with (I - 2 v v^T / v^T v) x = -sign(x0) * alpha * e0
        v = R[j:, j].copy()
        sign = 1.0 if v[0] >= 0.0 else -1.0
        v[0] += sign * alpha
        vnorm2 = 0.0
        for r in range(v.shape[0]):
            vnorm2 += v[r] * v[r]
        if vnorm2 == 0.0:
            continue
        for c in range(j, m):
            dot = 0.0
            for r in range(v.shape[0]):
                dot += v[r] * R[j + r, c]
            scale = 2.0 * dot / vnorm2
            for r in range(v.shape[0]):
                R[j + r, c] -= scale * v[r]
        for r in range(k):
            dot = 0.0
            for q in range(v.shape[0]):
                dot += Q[r, j + q] * v[q]
            scale = 2.0 * dot / vnorm2
            for q in range(v.shape[0]):
                Q[r, j + q] -= scale * v[q]
        for r in range(j + 1, k):
            R[r, j] = 0.0
    return Q, R, perm, chosen, runner_up


def _passive_lstsq(E, f, passive):
    idx = np.flatnonzero(passive)
    z = np.zeros(E.shape[1])
    if idx.size == 0:
        return z
    sub = np.ascontiguousarray(E[:, idx])
    sol = np.linalg.lstsq(sub, f, -1.0)[0]
    for a in range(idx.size):
        z[idx[a]] = sol[a]
    return z


def _half_sq(E, f, x):
    r = f - E @ x
    return 0.5 * (r @ r)


def _nnls(E, f, x0, max_iter, tol):
    """Lawson-Hanson active-set NNLS for ``min ||E x - f||, x >= 0``.

    ``x0`` is a warm start; its positive entries seed the passive set.
    ``tol`` is an absolute bound on the dual (gradient) entries of the
    inactive coordinates. Returns ``(x, w, iterations, converged,
    objective)`` with ``w = E^T (f - E x)`` and ``objective`` holding
    ``0.5 ||E x - f||^2`` after every outer iteration (entry 0 is the
    warm-started point).
    """
    n = E.shape[1]
    x = np.zeros(n)
    passive = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if x0[i] > 0.0:
            x[i] = x0[i]
            passive[i] = True
    objective = np.empty(max_iter + 2)
    n_obj = 0
    it = 0
    # move the warm start to the LS point of its support, staying feasible
    while passive.any() and it < max_iter:
        z = _passive_lstsq(E, f, passive)
        alpha = 1.0
        hit = -1
        for i in range(n):
            if passive[i] and z[i] <= 0.0:
                d = x[i] - z[i]
                a = x[i] / d if d > 0.0 else 0.0
                if hit < 0 or a < alpha:
                    alpha = a
                    hit = i
        if hit < 0:
            x = z
            break
        x = x + alpha * (z - x)
        x[hit] = 0.0
        for i in range(n):
            if not passive[i] or x[i] <= 0.0:
                passive[i] = False
                x[i] = 0.0
        it += 1
    objective[n_obj] = _half_sq(E, f, x)
    n_obj += 1
    excluded = np.zeros(n, dtype=np.bool_)
    w = E.T @ (f - E @ x)
    converged = False
    while it < max_iter:
        t = -1
        best = tol
        for i in range(n):
            if not passive[i] and not excluded[i] and w[i] > best:
                best = w[i]
                t = i
        if t < 0:
            converged = True
            break
        passive[t] = True
        z = _passive_lstsq(E, f, passive)
        if z[t] <= 0.0:
            # rounding made the entering variable useless; skip it until
            # the passive set changes
            passive[t] = False
            excluded[t] = True
            it += 1
            continue
        excluded[:] = False
        while True:
            alpha = 1.0
            hit = -1
            for i in range(n):
                if passive[i] and z[i] <= 0.0:
                    d = x[i] - z[i]
                    a = x[i] / d if d > 0.0 else 0.0
                    if hit < 0 or a < alpha:
                        alpha = a
                        hit = i
            if hit < 0:
                x = z
                break
            x = x + alpha * (z - x)
            x[hit] = 0.0
            for i in range(n):
                if not passive[i] or x[i] <= 0.0:
                    passive[i] = False
                    x[i] = 0.0
            if not passive.any():
                break
            z = _passive_lstsq(E, f, passive)
        w = E.T @ (f - E @ x)
        it += 1
        objective[n_obj] = _half_sq(E, f, x)
        n_obj += 1
    return x, w, it, converged, objective[:n_obj].copy()


# the fallback copy binds the uncompiled helpers regardless of how the module
# globals are rebound below
py_nnls = types.FunctionType(
    _nnls.__code__,
    dict(globals(), _passive_lstsq=_passive_lstsq, _half_sq=_half_sq),
    "py_nnls",
)
py_nnls.__doc__ = _nnls.__doc__


if HAS_NUMBA:
    _passive_lstsq = njit(cache=True)(_passive_lstsq)
    _half_sq = njit(cache=True)(_half_sq)
    qr_pivot = njit(cache=True)(py_qr_pivot)
    nnls = njit(cache=True)(_nnls)
else:
    qr_pivot = py_qr_pivot
    nnls = py_nnls
