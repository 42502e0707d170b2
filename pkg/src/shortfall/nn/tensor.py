"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every op builds a node holding its parents and a closure that maps the
upstream gradient to per-parent gradients. There is no broadcasting: each
op accepts only the shape combinations it documents and raises ShapeError
otherwise. Gradients accumulate additively at fan-out, so a tensor reused
in several places receives the sum of its downstream contributions.
"""

import numpy as np

from ..errors import EmbeddingIndexError, ShapeError

__all__ = [
    "Tensor", "astensor", "backward",
    "add", "add_bias", "add_expand", "add_scalar", "sub", "neg",
    "mul", "cmul", "matmul", "transpose",
    "tanh", "sigmoid", "log", "clip", "square",
    "softmax", "concat", "stack", "tsum", "tmean",
    "weighted_sum", "embedding", "select_time",
]


class Tensor:
    """A float64 array plus the bookkeeping for the reverse pass."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def astensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    return Tensor(data, parents=tuple(parents), backward_fn=backward_fn)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
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
    return order  # parents before children


def backward(loss):
    """Run the reverse pass from a scalar loss.

    Leaf gradients are accumulated (not reset), so two backward calls on
    two graphs sharing parameters add their contributions.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = _toposort(loss)
    grads = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        else:
            node.grad = g if node.grad is None else node.grad + g


def _same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = astensor(a), astensor(b)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(x, b):
    """x (..., n) + b (n,); the bias gradient sums over leading axes."""
    x, b = astensor(x), astensor(b)
    if b.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.data.shape} and {b.data.shape}")
    n = b.data.shape[0]
    return _node(x.data + b.data, (x, b),
                 lambda g: (g, g.reshape(-1, n).sum(axis=0)))


def add_expand(x, y):
    """x (B, L, a) + y (B, a), y repeated along the middle axis."""
    x, y = astensor(x), astensor(y)
    if x.ndim != 3 or y.ndim != 2 or x.data.shape[0] != y.data.shape[0] \
            or x.data.shape[2] != y.data.shape[1]:
        raise ShapeError(f"add_expand: shapes {x.data.shape} and {y.data.shape}")
    return _node(x.data + y.data[:, None, :], (x, y),
                 lambda g: (g, g.sum(axis=1)))


def add_scalar(x, s):
    """x + s where s is a scalar-shaped tensor (a bias parameter)."""
    x, s = astensor(x), astensor(s)
    if s.data.shape != ():
        raise ShapeError(f"add_scalar: scalar operand has shape {s.data.shape}")
    return _node(x.data + s.data, (x, s), lambda g: (g, np.asarray(g).sum()))


def sub(a, b):
    a, b = astensor(a), astensor(b)
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(x):
    x = astensor(x)
    return _node(-x.data, (x,), lambda g: (-g,))


def mul(a, b):
    a, b = astensor(a), astensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def cmul(x, c):
    x = astensor(x)
    c = float(c)
    return _node(x.data * c, (x,), lambda g: (g * c,))


def transpose(x):
    x = astensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.data.shape}")
    return _node(x.data.T, (x,), lambda g: (g.T,))


def matmul(a, b):
    a, b = astensor(a), astensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape}")
        return _node(ad @ bd, (a, b),
                     lambda g: (g[:, None] * bd[None, :], ad.T @ g))
    if ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape}")
        return _node(ad @ bd, (a, b),
                     lambda g: (bd @ g, ad[:, None] * g[None, :]))
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    if ad.ndim == 3 and bd.ndim == 1:
        if ad.shape[2] != bd.shape[0]:
            raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape}")
        return _node(ad @ bd, (a, b),
                     lambda g: (g[..., None] * bd,
                                np.tensordot(g, ad, axes=([0, 1], [0, 1]))))
    if ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape}")
        return _node(ad @ bd, (a, b),
                     lambda g: (g @ bd.T,
                                np.tensordot(ad, g, axes=([0, 1], [0, 1]))))
    raise ShapeError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")


# ------------------------------------------------------------- nonlinearities

def tanh(x):
    x = astensor(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    x = astensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def log(x):
    x = astensor(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient is zero where the input was clamped."""
    x = astensor(x)
    mask = (x.data > lo) & (x.data < hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


def square(x):
    x = astensor(x)
    return _node(x.data * x.data, (x,), lambda g: (g * 2.0 * x.data,))


def softmax(x):
    """Softmax along the last axis."""
    x = astensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (x,), bw)


# ----------------------------------------------------------------- structure

def concat(tensors, axis=-1):
    tensors = [astensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tensors, bw)


def stack(tensors, axis=0):
    tensors = [astensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of zero tensors")
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tensors, bw)


def tsum(x, axis=None):
    x = astensor(x)
    if axis is None:
        return _node(x.data.sum(), (x,),
                     lambda g: (np.full_like(x.data, g),))
    shape = x.data.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(x.data.sum(axis=axis), (x,), bw)


def tmean(x):
    x = astensor(x)
    n = x.data.size
    return _node(x.data.mean(), (x,),
                 lambda g: (np.full_like(x.data, g / n),))


def weighted_sum(weights, values):
    """Sum of value rows weighted per position.

    weights (L,), values (L, k) -> (k,); or batched
    weights (B, L), values (B, L, k) -> (B, k).
    """
    weights, values = astensor(weights), astensor(values)
    wd, vd = weights.data, values.data
    if wd.ndim == 1 and vd.ndim == 2 and wd.shape[0] == vd.shape[0]:
        return _node(wd @ vd, (weights, values),
                     lambda g: (vd @ g, wd[:, None] * g[None, :]))
    if wd.ndim == 2 and vd.ndim == 3 and wd.shape == vd.shape[:2]:
        out = np.einsum("bl,blk->bk", wd, vd)

        def bw(g):
            return (np.einsum("bk,blk->bl", g, vd),
                    wd[:, :, None] * g[:, None, :])

        return _node(out, (weights, values), bw)
    raise ShapeError(f"weighted_sum: shapes {wd.shape} and {vd.shape}")


def embedding(table, ids):
    """Row lookup; gradient scatters additively into the selected rows."""
    table = astensor(table)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.data.shape}")
    vocab = table.data.shape[0]
    idx = np.asarray(ids)
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise EmbeddingIndexError(f"id {bad} out of range for vocabulary size {vocab}")

    def bw(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, idx, g)
        return (acc,)

    return _node(table.data[idx], (table,), bw)


def select_time(x, t):
    """x (L, n) -> (n,) or x (B, L, n) -> (B, n) at time index t."""
    x = astensor(x)
    if x.ndim == 2:
        def bw(g):
            acc = np.zeros_like(x.data)
            acc[t] = g
            return (acc,)
        return _node(x.data[t], (x,), bw)
    if x.ndim == 3:
        def bw(g):
            acc = np.zeros_like(x.data)
            acc[:, t, :] = g
            return (acc,)
        return _node(x.data[:, t, :], (x,), bw)
    raise ShapeError(f"select_time expects rank 2 or 3, got {x.data.shape}")
