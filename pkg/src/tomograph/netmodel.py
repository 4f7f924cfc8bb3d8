"""Topology, OD ordering, routing matrices and seeded synthetic data.

Node and OD indices are 1-based at every public surface: OD pair
``(src, dst)`` lives at position ``(src - 1) * n + dst``. Arrays are
ordinary 0-based numpy arrays, so OD pair ``k`` is column ``k - 1``.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Topology:
    """Directed network with ``n`` nodes and links given as 1-based ``(from, to)`` pairs."""

    n: int
    links: tuple
    labels: tuple = None

    def __post_init__(self):
        links = tuple((int(a), int(b)) for a, b in self.links)
        object.__setattr__(self, "links", links)
        if self.n < 2:
            raise ValueError("a topology needs at least 2 nodes")
        if not links:
            raise ValueError("a topology needs at least 1 link")
        for a, b in links:
            if not (1 <= a <= self.n and 1 <= b <= self.n) or a == b:
                raise ValueError(f"invalid link {(a, b)} for n={self.n}")
        if len(set(links)) != len(links):
            raise ValueError("duplicate directed link")
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != self.n:
                raise ValueError("need one label per node")
            object.__setattr__(self, "labels", labels)

    @property
    def m(self):
        return len(self.links)


@dataclass(frozen=True)
class TrafficSeries:
    """``T x n^2`` OD volumes (kbps), columns in canonical OD order."""

    values: np.ndarray
    timestep_seconds: float = 300.0
    start_index: int = 0

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        n = int(round(np.sqrt(v.shape[1])))
        if n * n != v.shape[1]:
            raise ValueError(f"{v.shape[1]} columns is not a square OD count")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("traffic values must be finite and nonnegative")
        if self.timestep_seconds <= 0:
            raise ValueError("timestep_seconds must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return int(round(np.sqrt(self.values.shape[1])))

    @property
    def T(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class LinkSeries:
    """``T x m`` link loads (kbps)."""

    values: np.ndarray
    timestep_seconds: float = 300.0

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def T(self):
        return self.values.shape[0]


def od_index(src, dst, n):
    if not (1 <= src <= n and 1 <= dst <= n):
        raise ValueError(f"node index out of range: ({src}, {dst}) with n={n}")
    return (src - 1) * n + dst


def od_pair(k, n):
    if not 1 <= k <= n * n:
        raise ValueError(f"OD index {k} out of range for n={n}")
    return (k - 1) // n + 1, (k - 1) % n + 1


def od_sources(n):
    """0-based source node of every OD column."""
    return np.repeat(np.arange(n), n)


def self_flow_mask(n):
    return np.eye(n, dtype=bool).reshape(-1)


def _check_routing(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("routing matrix must be 2-D")
    if not np.all((A == 0) | (A == 1)):
        raise ValueError("routing matrix entries must be 0 or 1")
    return A


def link_counts(A, X):
    """``Y(t) = A X(t)`` for a TrafficSeries (returns LinkSeries) or an array."""
    A = _check_routing(A)
    values = X.values if isinstance(X, TrafficSeries) else np.asarray(X, dtype=float)
    if values.shape[-1] != A.shape[1]:
        raise ValueError(f"routing has {A.shape[1]} OD columns, traffic has {values.shape[-1]}")
    Y = values @ A.T
    if isinstance(X, TrafficSeries):
        return LinkSeries(Y, X.timestep_seconds)
    return Y


def _distances_to(n, succ, target):
    pred = [[] for _ in range(n)]
    for u in range(n):
        for v in succ[u]:
            pred[v].append(u)
    dist = np.full(n, -1)
    dist[target] = 0
    queue = deque([target])
    while queue:
        v = queue.popleft()
        for u in pred[v]:
            if dist[u] < 0:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


def shortest_paths(topology):
    """Hop-count shortest paths as lists of 0-based link indices, keyed by 0-based (src, dst).

    Ties resolve to the lexicographically smallest node sequence.
    """
    n = topology.n
    succ = [[] for _ in range(n)]
    link_id = {}
    for idx, (a, b) in enumerate(topology.links):
        succ[a - 1].append(b - 1)
        link_id[(a - 1, b - 1)] = idx
    for s in succ:
        s.sort()
    paths = {}
    for d in range(n):
        dist = _distances_to(n, succ, d)
        for s in range(n):
            if s == d or dist[s] < 0:
                continue
            u, path = s, []
            while u != d:
                v = next(v for v in succ[u] if dist[v] == dist[u] - 1)
                path.append(link_id[(u, v)])
                u = v
            paths[(s, d)] = path
    return paths


def routing_matrix(topology):
    """Binary ``m x n^2`` routing matrix; self-flow columns are zero."""
    n = topology.n
    A = np.zeros((topology.m, n * n))
    for (s, d), path in shortest_paths(topology).items():
        A[path, s * n + d] = 1.0
    return A


def is_strongly_connected(topology):
    n = topology.n
    succ = [[] for _ in range(n)]
    for a, b in topology.links:
        succ[a - 1].append(b - 1)
    return bool(_reach(succ, 0, n).all() and np.all(_distances_to(n, succ, 0) >= 0))


def _reach(succ, start, n):
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in succ[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


TOY_LINKS = ((1, 2), (2, 1), (2, 3), (3, 2))

TOY_ROUTING = np.array([
    [0, 1, 1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 1, 0, 0, 1, 0, 0],
    [0, 0, 1, 0, 0, 1, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 1, 1, 0],
], dtype=float)

TOY_TRAFFIC = np.array([0, 6, 4, 5, 0, 5, 7, 3, 0], dtype=float)


def toy_network():
    """The 3-node, 4-link line network 1-2-3 and its routing matrix."""
    return Topology(3, TOY_LINKS), TOY_ROUTING.copy()


def gen_topology(seed, n, avg_out_degree, max_retries=16):
    """Random strongly connected digraph with ``round(n * avg_out_degree)`` links.

    A random Hamiltonian cycle guarantees strong connectivity; the remaining
    links are drawn uniformly without replacement. Links are returned sorted.
    """
    n = int(n)
    if n < 2:
        raise ValueError("n must be at least 2")
    if avg_out_degree < 1:
        raise GenerationError("average out-degree below 1 cannot be strongly connected")
    m = int(round(n * avg_out_degree))
    if m > n * (n - 1):
        raise GenerationError(f"{m} links exceed the {n * (n - 1)} possible directed links")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        order = rng.permutation(n)
        cycle = {(int(order[i]), int(order[(i + 1) % n])) for i in range(n)}
        rest = [(a, b) for a in range(n) for b in range(n) if a != b and (a, b) not in cycle]
        pick = rng.permutation(len(rest))[: m - len(cycle)]
        links = sorted(cycle | {rest[i] for i in pick})
        topo = Topology(n, tuple((a + 1, b + 1) for a, b in links))
        if is_strongly_connected(topo):
            return topo, routing_matrix(topo)
    raise GenerationError("could not generate a strongly connected topology")


def _lognormal_noise(rng, shape, cv):
    if cv <= 0:
        return np.ones(shape)
    sigma = np.sqrt(np.log1p(cv * cv))
    return rng.lognormal(-0.5 * sigma * sigma, sigma, size=shape)


def gen_gravity_traffic(seed, topology, T, mean_scale=1000.0, temporal_period=288,
                        noise_cv=0.3, diurnal_amplitude=0.4, timestep_seconds=300.0):
    """Gravity-model OD series.

    ``X[(j,d)](t) = o_j * a_d / sum_{d' != j} a_d' * mean_scale * s(t) * eps``
    with heavy-tailed (lognormal) origin/destination weights, a sinusoidal
    daily factor ``s`` and mean-one lognormal noise of the given CV. Self
    flows are zero. ``temporal_period=None`` (or zero amplitude) makes ``s == 1``.
    """
    n = topology if isinstance(topology, (int, np.integer)) else topology.n
    if T < 1:
        raise ValueError("T must be at least 1")
    if mean_scale < 0 or noise_cv < 0:
        raise ValueError("mean_scale and noise_cv must be nonnegative")
    rng = np.random.default_rng(seed)
    o = rng.lognormal(0.0, 1.0, n)
    o /= o.mean()
    a = rng.lognormal(0.0, 1.0, n)
    share = np.outer(np.ones(n), a)
    np.fill_diagonal(share, 0.0)
    share /= share.sum(axis=1, keepdims=True)
    base = (o[:, None] * share).reshape(-1) * mean_scale
    t = np.arange(T)
    if temporal_period:
        s = 1.0 + diurnal_amplitude * np.sin(2 * np.pi * t / temporal_period)
    else:
        s = np.ones(T)
    X = base[None, :] * s[:, None] * _lognormal_noise(rng, (T, n * n), noise_cv)
    return TrafficSeries(X, timestep_seconds)


@dataclass(frozen=True)
class ExactModel:
    """Synthetic series where ``X(t) = Psi(t) X_c(t)`` and Psi is affine in ``Y(t)``.

    ``beta`` is the ``(m+1) x n^2`` map with ``fractions = [1, Y] @ beta``.
    """

    X: TrafficSeries
    Y: np.ndarray
    fractions: np.ndarray
    demands: np.ndarray
    beta: np.ndarray = field(repr=False)


def gen_exact_model(seed, A, n, T, base_demand=1000.0, demand_swing=0.3, period=500.0,
                    coupling=0.05, timestep_seconds=300.0):
    """Exact-model series for end-to-end checks.

    Source demands follow independent slow sinusoids. Destination fractions
    are ``p0 + D (Y - y_ref)`` with per-source zero-sum perturbations ``D``
    scaled by ``coupling``. For each ``t`` the loads solve the linear
    fixed point ``Y = A diag(X_c[src]) p(Y)``.
    """
    A = _check_routing(A)
    m = A.shape[0]
    if A.shape[1] != n * n:
        raise ValueError("routing matrix does not match n")
    rng = np.random.default_rng(seed)
    src = od_sources(n)
    offdiag = ~self_flow_mask(n)
    p0 = np.zeros(n * n)
    for j in range(n):
        rows = np.flatnonzero((src == j) & offdiag)
        p0[rows] = 0.5 * rng.dirichlet(np.full(rows.size, 2.0)) + 0.5 / rows.size
    base = base_demand * rng.uniform(0.5, 1.5, n)
    phase = rng.uniform(0, 2 * np.pi, n)
    t = np.arange(T)
    demands = base[None, :] * (1 + demand_swing * np.sin(2 * np.pi * t[:, None] / period + phase[None, :]))
    y_ref = A @ (p0 * base[src])
    y_scale = np.maximum(y_ref, y_ref.mean())
    R = rng.normal(size=(n * n, m))
    D = np.zeros((n * n, m))
    for j in range(n):
        rows = np.flatnonzero((src == j) & offdiag)
        w = p0[rows]
        centred = R[rows] - (w @ R[rows]) / w.sum()
        D[rows] = w[:, None] * centred
    D *= coupling / (np.sqrt(m) * y_scale[None, :])
    intercept = p0 - D @ y_ref
    Y = np.empty((T, m))
    F = np.empty((T, n * n))
    eye = np.eye(m)
    for i in range(T):
        B = A * demands[i, src][None, :]
        Y[i] = np.linalg.solve(eye - B @ D, B @ intercept)
        F[i] = intercept + D @ Y[i]
    if F.min() < 0 or F.max() > 1:
        raise GenerationError("coupling too strong: fractions left [0, 1]")
    X = F * demands[:, src]
    beta = np.vstack([intercept, D.T])
    return ExactModel(TrafficSeries(X, timestep_seconds), Y, F, demands, beta)
