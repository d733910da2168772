"""Reverse-mode automatic differentiation over dense numpy arrays.

A `Tensor` wraps a row-major float array and records the operation that
produced it as a backward closure; calling `backward()` on a scalar loss
walks the graph in reverse topological order and accumulates gradients
into every reachable leaf. Training runs in 32-bit floats; gradient
checking switches the default dtype to 64-bit for headroom.

Every op validates that its output is finite. NaN or Inf anywhere is a
hard `NumericsError`, never a silent propagation.
"""

from __future__ import annotations

import contextlib

import numpy as np

from vground.errors import NumericsError

_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    """Set the float dtype used by newly created tensors (float32/float64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt.type not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dt}")
    _DEFAULT_DTYPE = dt.type


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default dtype (used for 64-bit oracle mode)."""
    saved = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(saved)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the computation graph.

    Leaves created with `requires_grad=True` (parameters) receive
    accumulated gradients in `.grad` after `backward()`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        """Transpose sharing the underlying storage (a numpy view, never a copy)."""
        out = _make(self.data.T, (self,), "T", check=False)
        if out._parents:
            def backward(g):
                return (g.T,)
            out._backward = backward
        return out

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar, accumulating into leaf `.grad`."""
        if self.data.size != 1:
            raise NumericsError("backward() requires a scalar loss")
        if self._backward is None and not self.requires_grad:
            raise NumericsError("backward() called on a tensor with no recorded computation")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    # own the buffer: pg may alias g or be a view of it
                    if pg is g or pg.base is not None:
                        pg = pg.copy()
                    grads[id(parent)] = pg
                else:
                    acc += pg

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(x, dtype=dtype)
    t.grad = None
    t.requires_grad = False
    t.name = None
    t._backward = None
    t._parents = ()
    return t


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._backward is not None for t in tensors)


def _make(data: np.ndarray, parents: tuple, op: str, check: bool = True) -> Tensor:
    if check:
        _check_finite(data, op)
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = False
    t.name = None
    if _needs_grad(*parents):
        t._parents = parents
    else:
        t._parents = ()
    t._backward = None
    return t


# ---- primitive ops ------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.data.dtype)
    out = _make(a.data + b.data, (a, b), "add")
    if out._parents:
        def backward(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)
        out._backward = backward
    return out


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.data.dtype)
    out = _make(a.data - b.data, (a, b), "sub")
    if out._parents:
        def backward(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)
        out._backward = backward
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.data.dtype)
    out = _make(a.data * b.data, (a, b), "mul")
    if out._parents:
        def backward(g):
            return (_unbroadcast(g * b.data, a.data.shape),
                    _unbroadcast(g * a.data, b.data.shape))
        out._backward = backward
    return out


def div(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.data.dtype)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _make(a.data / b.data, (a, b), "div")
    if out._parents:
        def backward(g):
            ga = _unbroadcast(g / b.data, a.data.shape)
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            return ga, gb
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out._parents:
        def backward(g):
            return g @ b.data.T, a.data.T @ g
        out._backward = backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # stable two-branch form, no exp overflow on either tail
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    out = _make(y, (x,), "sigmoid")
    if out._parents:
        def backward(g):
            return (g * y * (1.0 - y),)
        out._backward = backward
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = _make(y, (x,), "tanh")
    if out._parents:
        def backward(g):
            return (g * (1.0 - y * y),)
        out._backward = backward
    return out


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    out = _make(y, (x,), "sqrt")
    if out._parents:
        def backward(g):
            return (g / (2.0 * y),)
        out._backward = backward
    return out


def absolute(x: Tensor) -> Tensor:
    out = _make(np.abs(x.data), (x,), "abs")
    if out._parents:
        sign = np.sign(x.data)  # subgradient 0 at the kink

        def backward(g):
            return (g * sign,)
        out._backward = backward
    return out


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), "sum")
    if out._parents:
        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.data.shape),)
        out._backward = backward
    return out


def tmean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = _make(x.data.reshape(shape), (x,), "reshape", check=False)
    if out._parents:
        def backward(g):
            return (g.reshape(x.data.shape),)
        out._backward = backward
    return out


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows `table[ids]`; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"row id out of range [0, {table.data.shape[0]})")
    out = _make(table.data[ids], (table,), "take_rows", check=False)
    if out._parents:
        def backward(g):
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            return (full,)
        out._backward = backward
    return out


# ---- fused losses --------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a plain array (forward-only helper)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy_parts(logits: Tensor, target_ids: np.ndarray,
                                mask: np.ndarray) -> tuple[Tensor, float]:
    """Masked sum of -log softmax(logits)[target], plus the active count.

    The two pieces let a caller pool positions across time steps before
    taking one global masked mean.
    """
    target_ids = np.asarray(target_ids)
    mask = np.asarray(mask, dtype=logits.data.dtype)
    if target_ids.size and target_ids.max() >= logits.data.shape[-1]:
        raise IndexError("target id out of vocabulary range")
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[:, 0]
    rows = np.arange(z.shape[0])
    nll = lse - z[rows, target_ids]
    count = float(mask.sum())
    out = _make(np.asarray((nll * mask).sum(), dtype=z.dtype), (logits,), "softmax_ce")
    if out._parents:
        probs = softmax(z)

        def backward(g):
            d = probs.copy()
            d[rows, target_ids] -= 1.0
            d *= (mask * g)[:, None]
            return (d,)
        out._backward = backward
    return out, count


def softmax_cross_entropy(logits: Tensor, target_ids: np.ndarray,
                          mask: np.ndarray | None = None) -> Tensor:
    """Mean over masked positions of the categorical cross entropy."""
    if mask is None:
        mask = np.ones(logits.data.shape[0], dtype=logits.data.dtype)
    loss_sum, count = softmax_cross_entropy_parts(logits, target_ids, mask)
    if count == 0:
        raise NumericsError("softmax_cross_entropy: every position is masked out")
    return mul(loss_sum, 1.0 / count)


def sigmoid_bce(logit: Tensor, label: np.ndarray) -> Tensor:
    """Mean binary cross entropy on logits, in the stable max-form."""
    y = np.asarray(label, dtype=logit.data.dtype)
    x = logit.data
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = per.size
    out = _make(np.asarray(per.sum() / n, dtype=x.dtype), (logit,), "sigmoid_bce")
    if out._parents:
        e = np.exp(-np.abs(x))
        s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)

        def backward(g):
            return (g * (s - y) / n,)
        out._backward = backward
    return out
