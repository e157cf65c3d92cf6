"""Masked entropic optimal transport between two embedding sets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..ndiff import NumericError, Tensor, apply_op
from ..ndiff.tensor import as_tensor


@dataclass
class SinkhornResult:
    rows: np.ndarray
    cols: np.ndarray
    plan: np.ndarray  # transported mass per masked pair
    cost: np.ndarray  # cost per masked pair
    f: np.ndarray
    g: np.ndarray

    @property
    def distance(self) -> float:
        return float(np.dot(self.plan, self.cost))

    def dense_plan(self, n: int, m: int) -> np.ndarray:
        P = np.zeros((n, m))
        P[self.rows, self.cols] = self.plan
        return P


def _segment_lse(v: np.ndarray, starts: np.ndarray, seg: np.ndarray) -> np.ndarray:
    mx = np.maximum.reduceat(v, starts)
    return mx + np.log(np.add.reduceat(np.exp(v - mx[seg]), starts))


def masked_sinkhorn(cost_rows: np.ndarray, cost_cols: np.ndarray, cost: np.ndarray, n: int, m: int,
                    epsilon: float, iterations: int) -> SinkhornResult:
    """Log-domain Sinkhorn restricted to the listed (row, col) pairs.

    Pairs outside the list have infinite cost, so they carry no mass. Every
    row and column needs at least one pair. Marginals are uniform.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    r_order = np.lexsort((cost_cols, cost_rows))
    rows, cols, c = cost_rows[r_order], cost_cols[r_order], cost[r_order]
    c_order = np.lexsort((rows, cols))
    rcount = np.bincount(rows, minlength=n)
    ccount = np.bincount(cols, minlength=m)
    if np.any(rcount == 0) or np.any(ccount == 0):
        raise ValueError("mask leaves a row or column without any admissible pair")
    rstart = np.concatenate([[0], np.cumsum(rcount)[:-1]])
    cstart = np.concatenate([[0], np.cumsum(ccount)[:-1]])
    cols_sorted = cols[c_order]
    log_a = -np.log(n)
    log_b = -np.log(m)
    f = np.zeros(n)
    g = np.zeros(m)
    for _ in range(iterations):
        f = epsilon * (log_a - _segment_lse((g[cols] - c) / epsilon, rstart, rows))
        vc = ((f[rows] - c) / epsilon)[c_order]
        g = epsilon * (log_b - _segment_lse(vc, cstart, cols_sorted))
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NumericError("sinkhorn", hint="scaling vectors diverged; try a larger epsilon")
    plan = np.exp((f[rows] + g[cols] - c) / epsilon)
    return SinkhornResult(rows, cols, plan, c, f, g)


def _pairs(mask) -> tuple[np.ndarray, np.ndarray]:
    if sp.issparse(mask):
        coo = sp.coo_matrix(mask)
        keep = coo.data != 0
        return coo.row[keep].astype(np.int64), coo.col[keep].astype(np.int64)
    r, c = np.nonzero(np.asarray(mask))
    return r.astype(np.int64), c.astype(np.int64)


def gtot_distance(receiver: Tensor, donor: np.ndarray, mask, epsilon: float = 1e-2,
                  iterations: int = 50) -> Tensor:
    """Masked Wasserstein distance between receiver and donor embeddings.

    Cost of pair (i, j) is ||receiver_i - donor_j||^2 when ``mask[i, j]`` is
    set; other pairs are inadmissible. The result is the transport cost of the
    entropic plan. Gradients flow to ``receiver`` only and treat the plan as
    fixed (envelope theorem), the donor side is a constant.
    """
    receiver = as_tensor(receiver)
    X = receiver.value
    Y = np.asarray(donor, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"embedding sizes differ: {X.shape} vs {Y.shape}")
    rows, cols = _pairs(mask)
    diff = X[rows] - Y[cols]
    cost = np.einsum("ij,ij->i", diff, diff)
    res = masked_sinkhorn(rows, cols, cost, X.shape[0], Y.shape[0], epsilon, iterations)
    d_rows = X[res.rows] - Y[res.cols]
    n = X.shape[0]

    def bw(g):
        w = 2.0 * float(g) * res.plan
        grad = np.zeros_like(X)
        np.add.at(grad, res.rows, w[:, None] * d_rows)
        return (grad,)

    return apply_op("gtot_distance", np.asarray(res.distance), (receiver,), bw)
