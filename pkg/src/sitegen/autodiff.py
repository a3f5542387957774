"""Dense-array reverse-mode differentiation and an Adam optimizer.

Everything is 64-bit floats with arrays of rank <= 3.  The op set is closed:
there is no general broadcasting beyond scalars, and every composite need
(bias rows, per-channel vector gating, segment reductions) gets its own named
op so the backward rules stay auditable.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


class GradCheckError(RuntimeError):
    """Raised when a finite-difference comparison hits a NaN."""


class Node:
    """One entry in the computation record: a value, its gradient accumulator,
    and backward provenance."""

    __slots__ = ("value", "grad", "parents", "_bw", "requires_grad", "op")

    def __init__(self, value, parents=(), bw=None, requires_grad=False, op="leaf"):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim > 3:
            raise ShapeError(f"rank {v.ndim} > 3 not supported (shape {v.shape})")
        self.value = v
        self.grad = None
        self.parents = tuple(parents)
        self._bw = bw
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents
        )
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def detach(self):
        """New leaf sharing this value; blocks all gradient flow upstream."""
        return Node(self.value, op="detach")

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def as_node(x):
    return x if isinstance(x, Node) else Node(x)


def _is_scalar(v):
    return v.ndim == 0 or v.size == 1


def _check_elemwise(a, b, opname):
    if a.value.shape == b.value.shape:
        return
    if _is_scalar(a.value) or _is_scalar(b.value):
        return
    raise ShapeError(f"{opname}: shapes {a.value.shape} and {b.value.shape} differ")


def _reduce_to(g, shape):
    """Collapse a broadcasted gradient back onto a scalar operand."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def add(a, b):
    a, b = as_node(a), as_node(b)
    _check_elemwise(a, b, "add")
    ash, bsh = a.value.shape, b.value.shape

    def bw(g):
        return (_reduce_to(g, ash), _reduce_to(g, bsh))

    return Node(a.value + b.value, (a, b), bw, op="add")


def sub(a, b):
    a, b = as_node(a), as_node(b)
    _check_elemwise(a, b, "sub")
    ash, bsh = a.value.shape, b.value.shape

    def bw(g):
        return (_reduce_to(g, ash), _reduce_to(-g, bsh))

    return Node(a.value - b.value, (a, b), bw, op="sub")


def mul(a, b):
    a, b = as_node(a), as_node(b)
    _check_elemwise(a, b, "mul")
    ash, bsh = a.value.shape, b.value.shape

    def bw(g):
        return (_reduce_to(g * b.value, ash), _reduce_to(g * a.value, bsh))

    return Node(a.value * b.value, (a, b), bw, op="mul")


def div(a, b):
    a, b = as_node(a), as_node(b)
    _check_elemwise(a, b, "div")
    ash, bsh = a.value.shape, b.value.shape

    def bw(g):
        return (
            _reduce_to(g / b.value, ash),
            _reduce_to(-g * a.value / (b.value * b.value), bsh),
        )

    return Node(a.value / b.value, (a, b), bw, op="div")


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(
            f"matmul: need 2-D operands, got {a.value.shape} and {b.value.shape}"
        )
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: shapes {a.value.shape} and {b.value.shape} differ")

    def bw(g):
        return (g @ b.value.T, a.value.T @ g)

    return Node(a.value @ b.value, (a, b), bw, op="matmul")


def add_bias(x, b):
    """x: (N, D) plus a row vector b: (D,)."""
    x, b = as_node(x), as_node(b)
    if x.value.ndim != 2 or b.value.shape != (x.value.shape[1],):
        raise ShapeError(f"add_bias: shapes {x.value.shape} and {b.value.shape} differ")

    def bw(g):
        return (g, g.sum(axis=0))

    return Node(x.value + b.value, (x, b), bw, op="add_bias")


def concat(nodes, axis=0):
    nodes = [as_node(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(nodes))
        )

    return Node(np.concatenate([n.value for n in nodes], axis=axis), nodes, bw, op="concat")


def reshape(a, shape):
    a = as_node(a)
    old = a.value.shape

    def bw(g):
        return (g.reshape(old),)

    return Node(a.value.reshape(shape), (a,), bw, op="reshape")


def take(a, idx):
    """Basic slicing, or row gather when idx is an integer array."""
    a = as_node(a)
    if isinstance(idx, np.ndarray) and idx.dtype.kind in "iu":
        idx = idx.copy()

        def bw(g):
            z = np.zeros_like(a.value)
            np.add.at(z, idx, g)
            return (z,)

        return Node(a.value[idx], (a,), bw, op="gather")

    def bw_slice(g):
        z = np.zeros_like(a.value)
        z[idx] += g
        return (z,)

    return Node(a.value[idx], (a,), bw_slice, op="slice")


def segment_sum(x, seg, num):
    """out[s] = sum of x[e] over entries e with seg[e] == s."""
    x = as_node(x)
    seg = np.asarray(seg, dtype=np.intp)
    out = np.zeros((num,) + x.value.shape[1:], dtype=np.float64)
    np.add.at(out, seg, x.value)

    def bw(g):
        return (g[seg],)

    return Node(out, (x,), bw, op="segment_sum")


def sum_(a, axis=None, keepdims=False):
    a = as_node(a)
    shp = a.value.shape

    def bw(g):
        if axis is None:
            return (np.full(shp, float(g)),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shp).copy(),)

    return Node(a.value.sum(axis=axis, keepdims=keepdims), (a,), bw, op="sum")


def mean(a, axis=None, keepdims=False):
    a = as_node(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def exp(a):
    a = as_node(a)
    out = np.exp(a.value)

    def bw(g):
        return (g * out,)

    return Node(out, (a,), bw, op="exp")


def log(a):
    a = as_node(a)

    def bw(g):
        return (g / a.value,)

    return Node(np.log(a.value), (a,), bw, op="log")


def sqrt(a):
    a = as_node(a)
    out = np.sqrt(a.value)

    def bw(g):
        return (g / (2.0 * out),)

    return Node(out, (a,), bw, op="sqrt")


def sigmoid(a):
    a = as_node(a)
    out = 1.0 / (1.0 + np.exp(-a.value))

    def bw(g):
        return (g * out * (1.0 - out),)

    return Node(out, (a,), bw, op="sigmoid")


def silu(a):
    a = as_node(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    out = a.value * s

    def bw(g):
        return (g * s * (1.0 + a.value * (1.0 - s)),)

    return Node(out, (a,), bw, op="silu")


def relu(a):
    a = as_node(a)
    mask = a.value > 0

    def bw(g):
        return (g * mask,)

    return Node(a.value * mask, (a,), bw, op="relu")


def softmax(a, axis=-1):
    a = as_node(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Node(out, (a,), bw, op="softmax")


def log_softmax(a, axis=-1):
    a = as_node(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Node(out, (a,), bw, op="log_softmax")


def layer_norm(a, eps=1e-5):
    """Normalize over the last axis; composed from primitive ops."""
    a = as_node(a)
    m = mean(a, axis=-1, keepdims=True)
    c = sub(a, _expand_last(m, a.value.shape))
    var = mean(mul(c, c), axis=-1, keepdims=True)
    denom = sqrt(add(var, eps))
    return div(c, _expand_last(denom, a.value.shape))


def _expand_last(m, shape):
    """Tile a (..., 1) node along the last axis to a full shape."""
    k = shape[-1]

    def bw(g):
        return (g.sum(axis=-1, keepdims=True),)

    return Node(np.broadcast_to(m.value, shape).copy(), (m,), bw, op="tile_last")


def norm_last(a, keepdims=False, eps=1e-12):
    """Euclidean norm over the last axis, smoothed near zero by eps."""
    a = as_node(a)
    sq = (a.value * a.value).sum(axis=-1, keepdims=True)
    n = np.sqrt(sq + eps)
    nv = n if keepdims else n[..., 0]

    def bw(g):
        gg = g if keepdims else g[..., None]
        return (gg * a.value / n,)

    return Node(nv, (a,), bw, op="norm_last")


def dot_last(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"dot_last: shapes {a.value.shape} and {b.value.shape} differ")

    def bw(g):
        gg = g[..., None]
        return (gg * b.value, gg * a.value)

    return Node((a.value * b.value).sum(axis=-1), (a, b), bw, op="dot_last")


def cross(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.shape != b.value.shape or a.value.shape[-1] != 3:
        raise ShapeError(f"cross: shapes {a.value.shape} and {b.value.shape} differ")

    def bw(g):
        return (np.cross(b.value, g), np.cross(g, a.value))

    return Node(np.cross(a.value, b.value), (a, b), bw, op="cross")


def scale_vectors(s, v):
    """Per-channel gate: s (..., C) times v (..., C, 3)."""
    s, v = as_node(s), as_node(v)
    if s.value.shape != v.value.shape[:-1] or v.value.shape[-1] != 3:
        raise ShapeError(
            f"scale_vectors: shapes {s.value.shape} and {v.value.shape} differ"
        )

    def bw(g):
        return ((g * v.value).sum(axis=-1), g * s.value[..., None])

    return Node(v.value * s.value[..., None], (s, v), bw, op="scale_vectors")


def outer_last(s, d):
    """Vector-from-scalar channels: s (N, C) outer d (N, 3) -> (N, C, 3)."""
    s, d = as_node(s), as_node(d)
    if s.value.ndim != 2 or d.value.shape != (s.value.shape[0], 3):
        raise ShapeError(f"outer_last: shapes {s.value.shape} and {d.value.shape} differ")

    def bw(g):
        return ((g * d.value[:, None, :]).sum(axis=-1), (g * s.value[:, :, None]).sum(axis=1))

    return Node(s.value[:, :, None] * d.value[:, None, :], (s, d), bw, op="outer_last")


def vec_linear(v, w):
    """Mix vector channels: v (N, C, 3) with w (C, O) -> (N, O, 3)."""
    v, w = as_node(v), as_node(w)
    if v.value.ndim != 3 or w.value.ndim != 2 or v.value.shape[1] != w.value.shape[0]:
        raise ShapeError(f"vec_linear: shapes {v.value.shape} and {w.value.shape} differ")
    out = np.einsum("nci,co->noi", v.value, w.value)

    def bw(g):
        return (
            np.einsum("noi,co->nci", g, w.value),
            np.einsum("nci,noi->co", v.value, g),
        )

    return Node(out, (v, w), bw, op="vec_linear")


def backward(root):
    """Populate grads of every reachable node that requires them.

    The root must be scalar-valued; detached nodes stop the traversal.
    """
    root = as_node(root)
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.value.shape}")

    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._bw is None or node.grad is None:
            continue
        grads = node._bw(node.grad)
        for p, gp in zip(node.parents, grads):
            if not p.requires_grad or gp is None:
                continue
            if p.grad is None:
                p.grad = np.asarray(gp, dtype=np.float64).reshape(p.value.shape).copy()
            else:
                p.grad += np.asarray(gp, dtype=np.float64).reshape(p.value.shape)


class Parameter:
    """A named trainable leaf with its Adam state."""

    def __init__(self, name, value):
        self.name = name
        self.node = Node(np.array(value, dtype=np.float64), requires_grad=True, op="param")
        self.m = np.zeros_like(self.node.value)
        self.v = np.zeros_like(self.node.value)
        self.step = 0

    @property
    def value(self):
        return self.node.value

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.node.value.shape})"


def adam_update(params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam step over all params; grads are zeroed afterwards.

    Parameters whose gradient contains NaN are skipped; the skip count is
    returned so callers can log a warning.
    """
    skipped = 0
    for p in params:
        g = p.node.grad
        if g is None:
            g = np.zeros_like(p.node.value)
        if np.isnan(g).any():
            skipped += 1
            p.node.grad = None
            continue
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        mhat = p.m / (1.0 - beta1**p.step)
        vhat = p.v / (1.0 - beta2**p.step)
        p.node.value -= lr * mhat / (np.sqrt(vhat) + eps)
        p.node.grad = None
    return skipped


def finite_difference_check(f, point, h=1e-5):
    """Max relative error between analytic gradient and central differences.

    f maps a Node holding an array like `point` to a scalar Node.
    """
    if not (1e-7 <= h <= 1e-3):
        raise ValueError(f"h={h} outside [1e-7, 1e-3]")
    point = np.asarray(point, dtype=np.float64)
    x = Node(point.copy(), requires_grad=True, op="gradcheck_input")
    out = f(x)
    backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(point)

    flat = point.ravel()
    worst = 0.0
    for i in range(flat.size):
        bump = flat.copy()
        bump[i] += h
        up = float(f(Node(bump.reshape(point.shape))).value)
        bump[i] -= 2 * h
        dn = float(f(Node(bump.reshape(point.shape))).value)
        fd = (up - dn) / (2.0 * h)
        an = analytic.ravel()[i]
        if math.isnan(fd) or math.isnan(an):
            raise GradCheckError(f"NaN in gradient comparison at coordinate {i}")
        err = abs(an - fd) / (abs(an) + 1e-8)
        worst = max(worst, err)
    return worst
