"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operation appends a node to an implicit tape (the expression graph) and
records the closure needed for its backward rule. Shapes are checked strictly:
the only broadcast anywhere is the bias add inside `affine`. Any op producing
a NaN/Inf raises NumericError immediately, so training loops fail loudly at
the op that diverged.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import ContractError, NumericError

_ids = itertools.count()


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus the tape bookkeeping for reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward", "nid")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf", parents=(), backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.op = op
        self.parents = parents
        self._backward = backward
        self.nid = next(_ids)
        if op != "leaf" and not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite result in op '{op}'")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # Python operator sugar; Tensor (+|-|*) Tensor requires equal shapes,
    # scalars dispatch to the dedicated constant ops.
    def __add__(self, other):
        return offset(self, other) if isinstance(other, (int, float)) else add(self, other)

    def __radd__(self, other):
        return offset(self, other)

    def __sub__(self, other):
        return offset(self, -other) if isinstance(other, (int, float)) else sub(self, other)

    def __rsub__(self, other):
        return offset(scale(self, -1.0), other)

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def leaf(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ContractError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    def bw(g, acc):
        acc(a, g)
        acc(b, g)
    return Tensor(a.data + b.data, op="add", parents=(a, b), backward=bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    def bw(g, acc):
        acc(a, g)
        acc(b, -g)
    return Tensor(a.data - b.data, op="sub", parents=(a, b), backward=bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    def bw(g, acc):
        acc(a, g * b.data)
        acc(b, g * a.data)
    return Tensor(a.data * b.data, op="mul", parents=(a, b), backward=bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    def bw(g, acc):
        acc(a, g * c)
    return Tensor(a.data * c, op="scale", parents=(a,), backward=bw)


def offset(a: Tensor, c: float) -> Tensor:
    c = float(c)
    def bw(g, acc):
        acc(a, g)
    return Tensor(a.data + c, op="offset", parents=(a,), backward=bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    def bw(g, acc):
        acc(a, g @ b.data.T)
        acc(b, a.data.T @ g)
    return Tensor(a.data @ b.data, op="matmul", parents=(a, b), backward=bw)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows (the one permitted broadcast)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ContractError(f"affine: incompatible shapes {x.shape} @ {w.shape}")
    if b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ContractError(f"affine: bias shape {b.shape} != ({w.shape[1]},)")
    def bw(g, acc):
        acc(x, g @ w.data.T)
        acc(w, x.data.T @ g)
        acc(b, g.sum(axis=0))
    return Tensor(x.data @ w.data + b.data, op="affine", parents=(x, w, b), backward=bw)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    def bw(g, acc):
        acc(a, g * (1.0 - out_data * out_data))
    return Tensor(out_data, op="tanh", parents=(a,), backward=bw)


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid(a.data)
    def bw(g, acc):
        acc(a, g * out_data * (1.0 - out_data))
    return Tensor(out_data, op="sigmoid", parents=(a,), backward=bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    def bw(g, acc):
        acc(a, g * _sigmoid(a.data))
    return Tensor(out_data, op="softplus", parents=(a,), backward=bw)


def log(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out_data = np.log(a.data)
    def bw(g, acc):
        acc(a, g / a.data)
    return Tensor(out_data, op="log", parents=(a,), backward=bw)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    def bw(g, acc):
        acc(a, g * out_data)
    return Tensor(out_data, op="exp", parents=(a,), backward=bw)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    lo = float(lo)
    mask = a.data > lo
    def bw(g, acc):
        acc(a, g * mask)
    return Tensor(np.maximum(a.data, lo), op="clamp_min", parents=(a,), backward=bw)


def _reduce_bw_shape(a: Tensor, axis):
    if axis is None:
        return lambda g: np.full(a.shape, float(g))
    return lambda g: np.broadcast_to(g, a.shape).copy()


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum over all elements (axis=None, scalar result) or rows (axis=1,
    keepdims result (n,1))."""
    if axis not in (None, 1):
        raise ContractError(f"sum: unsupported axis {axis}")
    if axis == 1 and a.data.ndim != 2:
        raise ContractError("sum(axis=1) requires a 2D tensor")
    out_data = a.data.sum() if axis is None else a.data.sum(axis=1, keepdims=True)
    expand = _reduce_bw_shape(a, axis)
    def bw(g, acc):
        acc(a, expand(g))
    return Tensor(out_data, op="sum", parents=(a,), backward=bw)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[1]
    return scale(tsum(a, axis), 1.0 / count)


def concat(tensors, axis: int = 1) -> Tensor:
    if not tensors:
        raise ContractError("concat: need at least one tensor")
    if any(t.data.ndim != tensors[0].data.ndim for t in tensors):
        raise ContractError("concat: rank mismatch")
    sizes = [t.shape[axis] for t in tensors]
    def bw(g, acc):
        offsets = np.cumsum([0] + sizes)
        for t, s0, s1 in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(s0, s1)
            acc(t, g[tuple(sl)])
    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        op="concat",
        parents=tuple(tensors),
        backward=bw,
    )


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    def bw(g, acc):
        full = np.zeros(a.shape)
        full[sl] = g
        acc(a, full)
    return Tensor(a.data[sl].copy(), op="slice", parents=(a,), backward=bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ContractError(f"reshape: cannot view {a.shape} as {shape}")
    def bw(g, acc):
        acc(a, g.reshape(a.shape))
    return Tensor(a.data.reshape(shape), op="reshape", parents=(a,), backward=bw)


def l1_norm(a: Tensor) -> Tensor:
    """Sum of absolute values; subgradient 0 at exact zeros."""
    def bw(g, acc):
        acc(a, float(g) * np.sign(a.data))
    return Tensor(np.abs(a.data).sum(), op="l1_norm", parents=(a,), backward=bw)


def reduce_min(a: Tensor, axis: int | None = None) -> Tensor:
    """Exact minimum; the subgradient routes to the lowest-index argmin."""
    if axis not in (None, 1):
        raise ContractError(f"min: unsupported axis {axis}")
    if axis is None:
        flat_idx = int(np.argmin(a.data))
        out_data = a.data.reshape(-1)[flat_idx]
        def bw(g, acc):
            full = np.zeros(a.shape)
            full.reshape(-1)[flat_idx] = float(g)
            acc(a, full)
        return Tensor(out_data, op="min", parents=(a,), backward=bw)
    idx = np.argmin(a.data, axis=1)
    out_data = a.data[np.arange(a.shape[0]), idx][:, None]
    def bw(g, acc):
        full = np.zeros(a.shape)
        full[np.arange(a.shape[0]), idx] = g[:, 0]
        acc(a, full)
    return Tensor(out_data, op="min", parents=(a,), backward=bw)


def smooth_min(a: Tensor, tau: float, axis: int | None = None) -> Tensor:
    """Soft minimum -tau*log(sum exp(-x/tau)), computed shift-stabilized.

    Default inside losses; its gradient spreads over near-minimal entries with
    softmin weights instead of jumping between tied argmins.
    """
    if tau <= 0:
        raise ContractError("smooth_min: tau must be > 0")
    if axis not in (None, 1):
        raise ContractError(f"smooth_min: unsupported axis {axis}")
    if axis is None:
        m = a.data.min()
        z = np.exp(-(a.data - m) / tau)
        zsum = z.sum()
        out_data = m - tau * np.log(zsum)
        def bw(g, acc):
            acc(a, float(g) * z / zsum)
        return Tensor(out_data, op="smooth_min", parents=(a,), backward=bw)
    m = a.data.min(axis=1, keepdims=True)
    z = np.exp(-(a.data - m) / tau)
    zsum = z.sum(axis=1, keepdims=True)
    out_data = m - tau * np.log(zsum)
    def bw(g, acc):
        acc(a, g * z / zsum)
    return Tensor(out_data, op="smooth_min", parents=(a,), backward=bw)


def pair_dists(a: Tensor) -> Tensor:
    """Row-wise pairwise distances of 2D point lists.

    Input (n, 2k) rows of flattened XY points; output (n, k(k-1)/2) distances
    ordered (0,1), (0,2), ..., (k-2, k-1). A tiny epsilon under the square
    root keeps the gradient bounded at coincident points.
    """
    if a.data.ndim != 2 or a.shape[1] % 2 != 0:
        raise ContractError(f"pair_dists: need (n, 2k) input, got {a.shape}")
    n, k2 = a.shape
    k = k2 // 2
    pts = a.data.reshape(n, k, 2)
    ii, jj = np.triu_indices(k, 1)
    diff = pts[:, ii, :] - pts[:, jj, :]  # (n, P, 2)
    eps = 1e-12
    dist = np.sqrt(np.einsum("npj,npj->np", diff, diff) + eps)
    def bw(g, acc):
        dd = (g / dist)[:, :, None] * diff  # (n, P, 2)
        grad_pts = np.zeros((n, k, 2))
        np.add.at(grad_pts, (slice(None), ii), dd)
        np.add.at(grad_pts, (slice(None), jj), -dd)
        acc(a, grad_pts.reshape(n, k2))
    return Tensor(dist, op="pair_dists", parents=(a,), backward=bw)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into .grad of every requires_grad tensor
    reachable from root; root must be scalar."""
    if root.data.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if node.nid in visited:
            continue
        visited.add(node.nid)
        stack.append((node, True))
        for p in node.parents:
            if p.nid not in visited and p.requires_grad:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {root.nid: np.ones(root.shape)}

    def acc(t: Tensor, g) -> None:
        if not t.requires_grad:
            return
        g = np.asarray(g, dtype=np.float64).reshape(t.shape)
        if t.nid in grads:
            grads[t.nid] = grads[t.nid] + g
        else:
            grads[t.nid] = g

    for node in reversed(topo):
        g = grads.get(node.nid)
        if g is None or node._backward is None:
            continue
        node._backward(g, acc)
    for node in topo:
        if node._backward is None and node.requires_grad:
            g = grads.get(node.nid)
            add_g = np.zeros(node.shape) if g is None else g
            node.grad = add_g if node.grad is None else node.grad + add_g


class Adam:
    """Adaptive-moment optimizer with bias correction over leaf tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient in optimizer step")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)


def sgd_step(params: list[Tensor], lr: float) -> None:
    """Plain gradient step; used by meta-learning inner loops."""
    for p in params:
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NumericError("non-finite gradient in sgd step")
        p.data = p.data - lr * p.grad
