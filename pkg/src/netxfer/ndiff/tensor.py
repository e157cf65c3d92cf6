"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. :func:`backward` walks the
graph in reverse topological order. There is no broadcasting beyond adding a
row-bias vector to a matrix.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

_grad_enabled = True


class NumericError(FloatingPointError):
    """A NaN or Inf appeared in a forward value or a gradient."""

    def __init__(self, op: str, where: str = "forward", hint: str = ""):
        self.op = op
        self.where = where
        msg = f"non-finite {where} value in op '{op}'"
        if hint:
            msg += f" ({hint})"
        super().__init__(msg)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording the graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(op: str, value: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``value`` as the output of ``op``.

    ``backward_fn(grad)`` must return one gradient (or None) per parent.
    """
    # a NaN or Inf anywhere makes the sum non-finite
    if not np.isfinite(value).all():
        raise NumericError(op)
    out = Tensor(value, op=op)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not root.requires_grad:
        return
    root.grad = np.ones_like(root.value) if grad is None else np.asarray(grad, dtype=np.float64)
    for node in reversed(_toposort(root)):
        if node.backward_fn is None or node.grad is None:
            continue
        pgrads = node.backward_fn(node.grad)
        for p, g in zip(node.parents, pgrads):
            if g is None or not p.requires_grad:
                continue
            if not np.isfinite(g).all():
                raise NumericError(node.op, where="gradient")
            if p.grad is None:
                p.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                p.grad += g
        if node.parents:
            # intermediate buffers are not needed once propagated
            node.grad = None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return apply_op("add", a.value + b.value, (a, b), lambda g: (g, g))
    if b.value.ndim == 1 and a.value.ndim == 2 and a.shape[1] == b.shape[0]:
        return apply_op("add_bias", a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return apply_op("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return apply_op("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return apply_op("scale", a.value * c, (a,), lambda g: (g * c,))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    # overflow-free form of 1 / (1 + exp(-x))
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = sigmoid_np(a.value)
    return apply_op("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.value)
    return apply_op("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.value > 0
    return apply_op("relu", a.value * pos, (a,), lambda g: (g * pos,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    return apply_op("softplus", np.logaddexp(0.0, x), (a,), lambda g: (g * sigmoid_np(x),))


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return apply_op("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def spmm(S: sp.spmatrix, a, St: sp.spmatrix | None = None) -> Tensor:
    """Constant sparse matrix times dense tensor (scatter-sum by incidence).

    ``St`` is the precomputed transpose, if the caller has one.
    """
    a = as_tensor(a)
    if St is None:
        St = S.T.tocsr()
    return apply_op("spmm", np.asarray(S @ a.value), (a,), lambda g: (np.asarray(St @ g),))


def take_rows(a, idx: np.ndarray, St: sp.spmatrix | None = None) -> Tensor:
    """Row gather ``a[idx]``; ``St`` is the (n_rows x len(idx)) selector used
    to scatter gradients back."""
    a = as_tensor(a)
    if St is None:
        n = a.shape[0]
        St = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))
    return apply_op("take_rows", a.value[idx], (a,), lambda g: (np.asarray(St @ g),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return apply_op("concat", np.concatenate([t.value for t in tensors], axis=axis), tensors, bw)


def rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    n = a.shape[0]

    def bw(g):
        full = np.zeros((n,) + g.shape[1:])
        full[start:stop] = g
        return (full,)

    return apply_op("rows", a.value[start:stop], (a,), bw)


def total(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return apply_op("sum", np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def sq_dist(a, ref: np.ndarray) -> Tensor:
    """Sum of squared differences between ``a`` and a constant array."""
    a = as_tensor(a)
    ref = np.asarray(ref, dtype=np.float64)
    if ref.shape != a.shape:
        raise ValueError(f"sq_dist: shape mismatch {a.shape} vs {ref.shape}")
    diff = a.value - ref
    return apply_op("sq_dist", np.asarray(np.sum(diff * diff)), (a,), lambda g: (2.0 * float(g) * diff,))


# ---------------------------------------------------------------- fused cells


def gru_cell(x, h, Wx, Wh, b, mask: np.ndarray | None = None) -> Tensor:
    """One GRU step with gates ordered (reset, update, candidate).

    r = s(x Wx_r + h Wh_r + b_r), z = s(x Wx_z + h Wh_z + b_z),
    n = tanh(x Wx_n + b_n + r * (h Wh_n)), h' = (1 - z) n + z h.
    Rows where ``mask`` is 0 keep their previous state.
    """
    x, h, Wx, Wh, b = (as_tensor(t) for t in (x, h, Wx, Wh, b))
    xv, hv, Wxv, Whv = x.value, h.value, Wx.value, Wh.value
    H = hv.shape[1]
    if Wxv.shape != (xv.shape[1], 3 * H) or Whv.shape != (H, 3 * H):
        raise ValueError(
            f"gru_cell: weight shapes {Wxv.shape}, {Whv.shape} do not fit input {xv.shape} / state {hv.shape}"
        )
    gx = xv @ Wxv + b.value
    gh = hv @ Whv
    rz = sigmoid_np(gx[:, : 2 * H] + gh[:, : 2 * H])
    r = rz[:, :H]
    z = rz[:, H:]
    ghn = gh[:, 2 * H :]
    n = np.tanh(gx[:, 2 * H :] + r * ghn)
    out = (1.0 - z) * n + z * hv
    if mask is not None:
        out = mask * out + (1.0 - mask) * hv

    def bw(g):
        if mask is not None:
            g_keep = g * (1.0 - mask)
            g = g * mask
        dz = g * (hv - n) * z * (1.0 - z)
        dan = g * (1.0 - z) * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        dgx = np.concatenate([dar, dz, dan], axis=1)
        dgh = np.concatenate([dar, dz, dan * r], axis=1)
        dh = g * z + dgh @ Whv.T
        if mask is not None:
            dh += g_keep
        return (dgx @ Wxv.T, dh, xv.T @ dgx, hv.T @ dgh, dgx.sum(axis=0))

    return apply_op("gru_cell", out, (x, h, Wx, Wh, b), bw)


def masked_mape(pred, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean of |pred - target| / target over entries where ``mask`` is true.

    Returned as a fraction, not a percentage.
    """
    pred = as_tensor(pred)
    p = pred.value.reshape(-1)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    count = int(m.sum())
    if count == 0:
        return apply_op("masked_mape", np.asarray(0.0), (pred,), lambda g: (np.zeros(pred.shape),))
    safe_y = np.where(m, y, 1.0)
    err = np.where(m, (p - safe_y) / safe_y, 0.0)
    value = np.abs(err).sum() / count
    shape = pred.shape

    def bw(g):
        d = np.where(m, np.sign(err) / safe_y, 0.0) * (float(g) / count)
        return (d.reshape(shape),)

    return apply_op("masked_mape", np.asarray(value), (pred,), bw)
