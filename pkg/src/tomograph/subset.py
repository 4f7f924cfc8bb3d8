"""Link subset selection from the compressed measurement matrix."""

from dataclasses import dataclass

import numpy as np

from .numerics import qr_pivot, svd


@dataclass(frozen=True)
class LinkSelection:
    """Links ranked by ``pivot_order`` (0-based); the first ``s`` are monitored."""

    pivot_order: np.ndarray
    s: int

    def __post_init__(self):
        order = np.asarray(self.pivot_order, dtype=np.intp)
        m = order.size
        if not np.array_equal(np.sort(order), np.arange(m)):
            raise ValueError("pivot_order must be a permutation")
        if not 1 <= self.s <= m:
            raise ValueError(f"monitored count {self.s} outside 1..{m}")
        order.setflags(write=False)
        object.__setattr__(self, "pivot_order", order)

    @property
    def m(self):
        return self.pivot_order.size

    @property
    def monitored(self):
        return self.pivot_order[: self.s]

    @property
    def unmonitored(self):
        return self.pivot_order[self.s:]

    @classmethod
    def all_links(cls, m):
        return cls(np.arange(m), m)


def select_links(phi_hat, s):
    """Rank the rows of ``phi_hat`` by pivoted QR on the leading ``s`` left singular vectors."""
    phi_hat = np.asarray(phi_hat, dtype=float)
    m = phi_hat.shape[0]
    if not 1 <= s <= m:
        raise ValueError(f"monitored count {s} outside 1..{m}")
    U = svd(phi_hat).U
    order = qr_pivot(U[:, :s].T).pivot_order
    return LinkSelection(order, s)


def slice_system(sel, y, phi_hat):
    y = np.asarray(y, dtype=float).reshape(-1)
    phi_hat = np.asarray(phi_hat, dtype=float)
    if y.size != sel.m or phi_hat.shape[0] != sel.m:
        raise ValueError(f"expected {sel.m} links")
    idx = sel.monitored
    return y[idx], phi_hat[idx]


def scatter(sel, y_s, base):
    """Write monitored values ``y_s`` back into a copy of the full vector ``base``."""
    out = np.array(base, dtype=float).reshape(-1)
    if out.size != sel.m or np.size(y_s) != sel.s:
        raise ValueError("dimension mismatch")
    out[sel.monitored] = y_s
    return out
