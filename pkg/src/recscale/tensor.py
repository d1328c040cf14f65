"""Dense tensors with reverse-mode automatic differentiation.

The engine is define-by-run: every op records its inputs and a backward
closure on the produced tensor, and ``backward()`` walks the graph in
reverse topological order. Arrays are float32 by default; pass float64
data for high-precision gradient checks. Single-threaded evaluation is
bitwise deterministic.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GradError",
    "DegenerateRowError",
    "tensor",
    "matmul",
    "layer_norm",
    "silu",
    "sigmoid",
    "softmax_rows",
    "gather",
    "concat_last",
    "softmax_cross_entropy",
    "bce_with_logits",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class GradError(RuntimeError):
    """Invalid use of the autodiff machinery."""


class DegenerateRowError(ValueError):
    """A softmax row had every entry masked out."""


class Tensor:
    """A dense row-major array plus optional gradient state.

    ``grad`` stays ``None`` until ``backward()`` reaches this tensor; it is
    never zero-filled silently. Tensors without grad state are immutable by
    convention and safe to share across threads.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_done")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._done = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- graph machinery -----------------------------------------------------

    def _make_child(self, data, parents, backward_fn):
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    def backward(self):
        """Populate ``grad`` on every reachable tensor with requires_grad."""
        if self.data.size != 1:
            raise GradError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        if self._done:
            raise GradError("backward() already called on this graph; rebuild the graph before calling again")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
            node._done = True

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        data = self.data + other.data

        def bwd(g):
            self._accumulate(g)
            other._accumulate(g)

        return self._make_child(data, (self, other), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        data = self.data - other.data

        def bwd(g):
            self._accumulate(g)
            other._accumulate(-g)

        return self._make_child(data, (self, other), bwd)

    def __neg__(self):
        def bwd(g):
            self._accumulate(-g)

        return self._make_child(-self.data, (self,), bwd)

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        data = self.data * other.data

        def bwd(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)

        return self._make_child(data, (self, other), bwd)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        data = np.asarray(self.data.sum())

        def bwd(g):
            self._accumulate(np.broadcast_to(g, self.data.shape))

        return self._make_child(data, (self,), bwd)

    def mean(self):
        n = self.data.size
        data = np.asarray(self.data.mean())

        def bwd(g):
            self._accumulate(np.broadcast_to(g / n, self.data.shape))

        return self._make_child(data, (self,), bwd)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        data = self.data.reshape(shape)

        def bwd(g):
            self._accumulate(g.reshape(old))

        return self._make_child(data, (self,), bwd)

    def transpose(self, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        data = self.data.transpose(axes)

        def bwd(g):
            self._accumulate(g.transpose(inv))

        return self._make_child(data, (self,), bwd)

    def take_last(self, start, stop):
        """Slice [start:stop) of the last axis."""
        data = self.data[..., start:stop]

        def bwd(g):
            full = np.zeros_like(self.data)
            full[..., start:stop] = g
            self._accumulate(full)

        return self._make_child(data, (self,), bwd)

    def item(self):
        return float(self.data.reshape(()))


def tensor(data, requires_grad=False, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _swap_last(a):
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        a._accumulate(np.matmul(g, _swap_last(b.data)))
        b._accumulate(np.matmul(_swap_last(a.data), g))

    return a._make_child(data, (a, b), bwd)


def silu(x: Tensor) -> Tensor:
    """Elementwise x * sigmoid(x)."""
    sig = _stable_sigmoid(x.data)
    data = x.data * sig

    def bwd(g):
        x._accumulate(g * sig * (1.0 + x.data * (1.0 - sig)))

    return x._make_child(data, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    sig = _stable_sigmoid(x.data)

    def bwd(g):
        x._accumulate(g * sig * (1.0 - sig))

    return x._make_child(sig, (x,), bwd)


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm over an empty last dimension")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def bwd(g):
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        x._accumulate(dx)
        gamma._accumulate(g * xhat)
        beta._accumulate(g)

    return x._make_child(data, (x, gamma, beta), bwd)


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row softmax over the last axis; masked entries are exactly zero.

    ``mask`` is a boolean array broadcastable to x (True = keep). A fully
    masked row is an error rather than a silent NaN.
    """
    if mask is None:
        keep = np.ones(x.data.shape, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    if not keep.any(axis=-1).all():
        raise DegenerateRowError("softmax_rows: a row has every entry masked")
    neg = np.array(-np.inf, dtype=x.dtype)
    shifted = np.where(keep, x.data, neg)
    m = shifted.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(shifted - m), 0.0).astype(x.dtype)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        x._accumulate(out * (g - dot))

    return x._make_child(out, (x,), bwd)


def gather(table: Tensor, idx) -> Tensor:
    """Index the first axis of ``table`` with an integer array.

    Output shape is ``idx.shape + table.shape[1:]``; the gradient
    scatter-adds into the table rows.
    """
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(
            f"gather index out of range [0, {table.data.shape[0]}): min={idx.min()}, max={idx.max()}"
        )
    data = table.data[idx]

    def bwd(g):
        if not table.requires_grad:
            return
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return table._make_child(data, (table,), bwd)


def concat_last(parts) -> Tensor:
    """Concatenate along the last axis."""
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            p._accumulate(g[..., off:off + w])
            off += w

    return parts[0]._make_child(data, tuple(parts), bwd)


def softmax_cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean softmax cross-entropy over (optionally masked) positions.

    ``logits`` has classes on the last axis, ``targets`` holds class
    indices of the leading shape, ``mask`` selects which positions count.
    """
    targets = np.asarray(targets)
    if targets.size and (targets.min() < 0 or targets.max() >= logits.data.shape[-1]):
        raise IndexError(f"target out of range [0, {logits.data.shape[-1]})")
    if mask is None:
        keep = np.ones(targets.shape, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), targets.shape)
    count = int(keep.sum())
    if count == 0:
        raise ValueError("softmax_cross_entropy: no unmasked positions")
    z = logits.data
    m = z.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(z - m).sum(axis=-1))
    picked = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    per = lse - picked
    data = np.asarray((per * keep).sum() / count, dtype=z.dtype)

    def bwd(g):
        p = np.exp(z - m)
        p /= p.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(z)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        dz = (p - onehot) * (keep[..., None] / count)
        logits._accumulate(g * dz.astype(z.dtype))

    return logits._make_child(data, (logits,), bwd)


def bce_with_logits(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean binary cross-entropy with a log-sum-exp-stable formulation."""
    y = np.asarray(labels, dtype=logits.dtype)
    if mask is None:
        keep = np.ones(y.shape, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), y.shape)
    count = int(keep.sum())
    if count == 0:
        raise ValueError("bce_with_logits: no unmasked positions")
    z = logits.data
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray((per * keep).sum() / count, dtype=z.dtype)

    def bwd(g):
        dz = (_stable_sigmoid(z) - y) * (keep / count)
        logits._accumulate(g * dz.astype(z.dtype))

    return logits._make_child(data, (logits,), bwd)
