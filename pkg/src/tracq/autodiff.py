"""Dense float64 tensors with reverse-mode differentiation.

The tape is define-by-run: every operation on tensors that require gradients
records its parents and a backward closure, and ``Tensor.backward()`` replays
the closures in reverse topological order. Operations on constant tensors
record nothing, so cached activations of frozen submodules stay out of the
graph entirely.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

_tape_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording (inference mode) inside the context."""
    global _tape_enabled
    previous = _tape_enabled
    _tape_enabled = False
    try:
        yield
    finally:
        _tape_enabled = previous


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_array(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def numpy(self) -> Array:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- autodiff ------------------------------------------------------
    def backward(self, grad: Array | None = None) -> None:
        """Accumulate gradients of ``self`` w.r.t. every tensor on the tape."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = _as_array(grad)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def _accumulate(self, grad: Array) -> None:
        self.grad = grad if self.grad is None else self.grad + grad

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _scalar_error(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: Array, parents: Sequence[Tensor], backward: Callable[[Tensor], Callable[[], None]]) -> Tensor:
    """Build an output tensor, recording the tape only when a parent needs it."""
    out = Tensor(data)
    if _tape_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward(out)
    return out


# -- arithmetic ---------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad, b.shape))
        return run

    return _node(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad * a.data, b.shape))
        return run

    return _node(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data / b.data

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))
        return run

    return _node(data, (a, b), bw)


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    e = float(exponent)
    data = a.data ** e

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * e * a.data ** (e - 1.0))
        return run

    return _node(data, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs [m,k] @ [k,n], got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ out.grad)
        return run

    return _node(data, (a, b), bw)


def affine(x, w, b=None) -> Tensor:
    """Fused x @ w + b (b broadcasting over rows)."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine needs [m,k] @ [k,n], got {x.shape} @ {w.shape}")
    if b is None:
        return matmul(x, w)
    b = _wrap(b)
    data = x.data @ w.data + b.data

    def bw(out: Tensor):
        def run():
            if x.requires_grad:
                x._accumulate(out.grad @ w.data.T)
            if w.requires_grad:
                w._accumulate(x.data.T @ out.grad)
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad, b.shape))
        return run

    return _node(data, (x, w, b), bw)


def layer_norm_op(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Fused last-axis layer normalization with affine output."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_sigma
    data = xhat * gain.data + bias.data

    def bw(out: Tensor):
        def run():
            g = out.grad
            if gain.requires_grad:
                gain._accumulate(_unbroadcast(g * xhat, gain.shape))
            if bias.requires_grad:
                bias._accumulate(_unbroadcast(g, bias.shape))
            if x.requires_grad:
                dxhat = g * gain.data
                mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
                mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
                x._accumulate((dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_sigma)
        return run

    return _node(data, (x, gain, bias), bw)


def multi_head_core(qp, kp, vp, n_heads: int) -> Tensor:
    """Fused per-head scaled-dot attention over projected inputs.

    Splits the feature axis into heads, attends per head with batched numpy
    matmuls, and concatenates the heads back; one tape node for the whole
    grid of head computations."""
    qp, kp, vp = _wrap(qp), _wrap(kp), _wrap(vp)
    n_q, d = qp.shape
    n_k = kp.shape[0]
    if d % n_heads != 0 or kp.shape[1] != d or vp.shape[1] != d:
        raise ShapeError(f"bad head split: {qp.shape}, {kp.shape}, {vp.shape}, h={n_heads}")
    dk = d // n_heads
    scale = 1.0 / np.sqrt(dk)

    def split(t: Array, rows: int) -> Array:  # [rows, d] -> [h, rows, dk]
        return t.reshape(rows, n_heads, dk).transpose(1, 0, 2)

    qh, kh, vh = split(qp.data, n_q), split(kp.data, n_k), split(vp.data, n_k)
    logits = qh @ kh.transpose(0, 2, 1) * scale
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=-1, keepdims=True)
    data = (weights @ vh).transpose(1, 0, 2).reshape(n_q, d)

    def bw(out: Tensor):
        def run():
            gh = out.grad.reshape(n_q, n_heads, dk).transpose(1, 0, 2)
            if vp.requires_grad:
                dvh = weights.transpose(0, 2, 1) @ gh
                vp._accumulate(dvh.transpose(1, 0, 2).reshape(n_k, d))
            if qp.requires_grad or kp.requires_grad:
                dw = gh @ vh.transpose(0, 2, 1)
                dlogits = weights * (dw - (dw * weights).sum(axis=-1, keepdims=True))
                if qp.requires_grad:
                    dqh = dlogits @ kh * scale
                    qp._accumulate(dqh.transpose(1, 0, 2).reshape(n_q, d))
                if kp.requires_grad:
                    dkh = dlogits.transpose(0, 2, 1) @ qh * scale
                    kp._accumulate(dkh.transpose(1, 0, 2).reshape(n_k, d))
        return run

    return _node(data, (qp, kp, vp), bw)


def transpose(a) -> Tensor:
    a = _wrap(a)
    data = a.data.T

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad.T)
        return run

    return _node(data, (a,), bw)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape)

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad.reshape(a.shape))
        return run

    return _node(data, (a,), bw)


def take(a, index) -> Tensor:
    """Indexing: ints, slices, tuples thereof, or a 1-D integer row index."""
    a = _wrap(a)
    duplicates_possible = isinstance(index, (list, np.ndarray))
    if duplicates_possible:
        index = np.asarray(index, dtype=np.intp)
    data = a.data[index]

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                g = np.zeros_like(a.data)
                if duplicates_possible:
                    np.add.at(g, index, out.grad)
                else:
                    g[index] += out.grad
                a._accumulate(g)
        return run

    return _node(data, (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def bw(out: Tensor):
        def run():
            offset = 0
            for p, n in zip(parts, sizes):
                if p.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(offset, offset + n)
                    p._accumulate(out.grad[tuple(sl)])
                offset += n
        return run

    return _node(data, parts, bw)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(g, a.shape).copy())
        return run

    return _node(data, (a,), bw)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    count = a.size if axis is None else a.shape[axis]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- elementwise nonlinearities ------------------------------------------
def exp(a) -> Tensor:
    a = _wrap(a)
    data = np.exp(a.data)

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * data)
        return run

    return _node(data, (a,), bw)


def log(a) -> Tensor:
    a = _wrap(a)
    data = np.log(a.data)

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad / a.data)
        return run

    return _node(data, (a,), bw)


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def absolute(a) -> Tensor:
    a = _wrap(a)
    data = np.abs(a.data)

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * np.sign(a.data))
        return run

    return _node(data, (a,), bw)


def relu(a) -> Tensor:
    a = _wrap(a)
    data = np.maximum(a.data, 0.0)

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * (a.data > 0.0))
        return run

    return _node(data, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * data * (1.0 - data))
        return run

    return _node(data, (a,), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; gradient follows the larger operand (split on ties)."""
    a, b = _wrap(a), _wrap(b)
    data = np.maximum(a.data, b.data)

    def bw(out: Tensor):
        def run():
            ge = a.data >= b.data
            le = b.data >= a.data
            tie = ge & le
            wa = np.where(tie, 0.5, ge.astype(np.float64))
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad * wa, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad * (1.0 - wa), b.shape))
        return run

    return _node(data, (a, b), bw)


def minimum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = np.minimum(a.data, b.data)

    def bw(out: Tensor):
        def run():
            le = a.data <= b.data
            ge = b.data <= a.data
            tie = le & ge
            wa = np.where(tie, 0.5, le.astype(np.float64))
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad * wa, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad * (1.0 - wa), b.shape))
        return run

    return _node(data, (a, b), bw)


def clamp_min(a, floor: float) -> Tensor:
    return maximum(a, Tensor(np.full((), floor)))


# -- softmax family -------------------------------------------------------
def softmax(a, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; slices along ``axis`` sum to 1."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                g = out.grad
                inner = (g * data).sum(axis=axis, keepdims=True)
                a._accumulate(data * (g - inner))
        return run

    return _node(data, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    probs = np.exp(data)

    def bw(out: Tensor):
        def run():
            if a.requires_grad:
                g = out.grad
                a._accumulate(g - probs * g.sum(axis=axis, keepdims=True))
        return run

    return _node(data, (a,), bw)


def cross_entropy(logits, targets, class_weights=None) -> Tensor:
    """Weighted mean of -log softmax(logits)[target] over rows.

    ``targets`` are integer class ids in [0, C); ``class_weights`` (length C,
    positive) rescale each row by the weight of its target class, with the
    mean taken over the summed weights, so a down-weighted background class
    contributes proportionally less.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [n, C] logits, got {logits.shape}")
    n, c = logits.shape
    if targets.ndim != 1 or targets.shape[0] != n:
        raise ShapeError(f"cross_entropy targets must be [n]={n}, got {targets.shape}")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= c:
        raise IndexError(f"target class out of range [0, {c})")
    if class_weights is None:
        w = np.ones(c)
    else:
        w = _as_array(class_weights)
        if w.shape != (c,):
            raise ShapeError(f"class_weights must be [{c}], got {w.shape}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    row_w = w[targets]
    total_w = row_w.sum()
    nll = -logp[np.arange(n), targets]
    data = np.array((nll * row_w).sum() / total_w)

    def bw(out: Tensor):
        def run():
            if logits.requires_grad:
                probs = np.exp(logp)
                g = probs * row_w[:, None]
                g[np.arange(n), targets] -= row_w
                logits._accumulate(out.grad * g / total_w)
        return run

    return _node(data, (logits,), bw)


def assert_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.isfinite(t.data).all():
        raise FloatingPointError(f"non-finite values in {what}")
    return t
