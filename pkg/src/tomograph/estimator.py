"""Online compressed-sensing estimator with a dynamic measurement matrix.

Each step assembles the current link-load vector from fresh measurements on
monitored links and carried-forward model estimates elsewhere, predicts the
demand transform from it, reselects the monitored links, solves for the
per-source demands and maps them back to OD flows.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .demand import (
    DemandRegressor,
    build_phi,
    demand_fractions,
    predict_psi,
    train_regressor,
)
from .netmodel import link_counts
from .numerics import CONSTRAINT_MODES, CwlsProblem, covariance_weight, solve_cwls
from .subset import LinkSelection, select_links


@dataclass(frozen=True)
class EstimatorConfig:
    s: int = None  # monitored links; None means all
    constraint_mode: str = "lower_bound"
    tolerance: float = 1e-8
    max_iterations: int = 10_000
    renormalize: bool = False
    reselect_every: int = 1
    include_self: bool = False
    robust: bool = True
    lagged_selection: bool = False
    weight_eps: float = 1e-6

    def __post_init__(self):
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ValueError(f"unknown constraint_mode {self.constraint_mode!r}")
        if self.reselect_every < 1:
            raise ValueError("reselect_every must be >= 1")
        if self.s is not None and self.s < 1:
            raise ValueError("s must be positive")


@dataclass(frozen=True)
class EstimatorState:
    A: np.ndarray
    regressor: DemandRegressor
    link_cov: np.ndarray
    y_carry: np.ndarray
    config: EstimatorConfig
    selection: LinkSelection = None
    t: int = 0

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.regressor.n

    @property
    def s(self):
        return self.m if self.config.s is None else min(self.config.s, self.m)


@dataclass(frozen=True)
class StepResult:
    x_hat: np.ndarray
    xc_hat: np.ndarray
    y_hat: np.ndarray
    selection: LinkSelection
    iterations: int
    kkt_residual: float
    converged: bool
    feasible: bool
    mode: str

    @property
    def flagged(self):
        return not self.converged


@dataclass(frozen=True)
class RunTrace:
    steps: list = field(default_factory=list)
    start_index: int = 0

    def __len__(self):
        return len(self.steps)

    @property
    def x_hat(self):
        if not self.steps:
            return np.zeros((0, 0))
        return np.vstack([r.x_hat for r in self.steps])

    @property
    def xc_hat(self):
        if not self.steps:
            return np.zeros((0, 0))
        return np.vstack([r.xc_hat for r in self.steps])

    @property
    def y_hat(self):
        if not self.steps:
            return np.zeros((0, 0))
        return np.vstack([r.y_hat for r in self.steps])

    @property
    def n_flagged(self):
        return sum(r.flagged for r in self.steps)

    @property
    def n_infeasible(self):
        return sum(not r.feasible for r in self.steps)


def link_covariance(Y):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] < 2:
        return np.zeros((Y.shape[1], Y.shape[1]))
    return np.atleast_2d(np.cov(Y, rowvar=False, ddof=1))


def init_state(train, config=EstimatorConfig()):
    """Train the regressor and link covariance on a training bundle.

    ``train`` is a :class:`~tomograph.ingest.DatasetBundle` (anything with
    ``A`` and ``X`` attributes works).
    """
    A = np.asarray(train.A, dtype=float)
    X = train.X.values if hasattr(train.X, "values") else np.asarray(train.X, dtype=float)
    if X.shape[0] < 1:
        raise ValueError("training data is empty")
    n = int(round(np.sqrt(X.shape[1])))
    Y = link_counts(A, X)
    reg = train_regressor(Y, demand_fractions(X, n, config.include_self),
                          include_self=config.include_self, robust=config.robust)
    # overwritten by the first (full) measurement
    y_carry = np.maximum(Y[-1], 0.0)
    return EstimatorState(A, reg, link_covariance(Y), y_carry, config)


def prior_xc(phi_s, y_s):
    """Ridge normal-equations start point, clamped at zero."""
    phi_s = np.atleast_2d(np.asarray(phi_s, dtype=float))
    y_s = np.asarray(y_s, dtype=float).reshape(-1)
    if phi_s.shape[0] != y_s.size:
        raise ValueError("dimension mismatch")
    G = phi_s.T @ phi_s
    n = G.shape[0]
    tr = np.trace(G)
    if tr <= 0:
        return np.zeros(n)
    x = np.linalg.solve(G + 1e-8 * tr / n * np.eye(n), phi_s.T @ y_s)
    return np.maximum(x, 0.0)


def _measure(source, idx):
    if callable(source):
        return np.asarray(source(idx), dtype=float).reshape(-1)
    return np.asarray(source, dtype=float).reshape(-1)[idx]


def solve_step(phi_s, y_s, link_cov_s, config):
    """Weighted constrained solve with fallback to the sign-only mode when infeasible."""
    weight = covariance_weight(link_cov_s, config.weight_eps)
    start = prior_xc(phi_s, y_s)
    prob = CwlsProblem(phi_s, y_s, weight, config.constraint_mode, start,
                       config.tolerance, config.max_iterations)
    res = solve_cwls(prob)
    if not res.feasible:
        fallback = solve_cwls(replace(prob, constraint_mode="none"))
        return replace(fallback, feasible=False, iterations=res.iterations + fallback.iterations)
    return res


def step(state, y_t):
    """One estimation step; returns ``(result, new_state)``.

    ``y_t`` is either the full link-load vector of this timestamp (only the
    entries of links monitored at ``t`` are read) or a callable mapping an
    array of 0-based link indices to their measurements.
    """
    cfg = state.config
    m = state.m
    prev = state.selection if state.selection is not None else LinkSelection.all_links(m)
    y_asm = np.array(state.y_carry, dtype=float)
    y_asm[prev.monitored] = _measure(y_t, prev.monitored)

    psi = predict_psi(state.regressor, y_asm, cfg.renormalize)
    phi = build_phi(state.A, psi)

    due = state.selection is None or state.t % cfg.reselect_every == 0
    sel = select_links(phi, state.s) if due else prev

    if cfg.lagged_selection and state.selection is not None:
        # the new selection only takes effect from the next timestamp
        solve_sel = prev
        y_s = y_asm[solve_sel.monitored]
    else:
        solve_sel = sel
        y_s = _measure(y_t, solve_sel.monitored)
    idx = solve_sel.monitored
    res = solve_step(phi[idx], y_s, state.link_cov[np.ix_(idx, idx)], cfg)

    xc = res.solution
    x_hat = psi @ xc
    y_hat = phi @ xc
    carry = np.maximum(y_hat, 0.0)
    carry[idx] = y_s
    result = StepResult(x_hat, xc, y_hat, solve_sel, res.iterations, res.kkt_residual,
                        res.converged, res.feasible, res.mode)
    return result, replace(state, y_carry=carry, selection=sel, t=state.t + 1)


def run(state, test, horizon=None):
    """Fold :func:`step` over the test period; returns ``(RunTrace, final_state)``.

    ``test`` is a bundle (link loads derived from its traffic) or a ``T x m``
    array of link loads.
    """
    if hasattr(test, "X"):
        X = test.X.values if hasattr(test.X, "values") else np.asarray(test.X)
        Y = link_counts(state.A, X)
        start = getattr(test.X, "start_index", 0)
    else:
        Y = np.atleast_2d(np.asarray(test, dtype=float))
        start = 0
    T = Y.shape[0] if horizon is None else int(horizon)
    if T > Y.shape[0]:
        raise ValueError(f"horizon {T} exceeds the {Y.shape[0]} test samples")
    steps = []
    for t in range(T):
        res, state = step(state, Y[t])
        steps.append(res)
    return RunTrace(steps, start), state
