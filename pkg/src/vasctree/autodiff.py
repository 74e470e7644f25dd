"""Small reverse-mode tape over numpy arrays.

Supports exactly the operations the vessel losses need: elementwise
arithmetic, ReLU/abs/sigmoid/exp/log, reductions, cross-shaped max pooling
with argmax routing (first window cell in raster order wins ties), all-ones
convolution, gather/pick, softmax and log-sum-exp along the last axis.
Values are float64 ndarrays (0-d for scalars); gradients accumulate on
leaves after ``backward``.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.special import expit

from ._pool import cross_offsets, shifted

_EPS = 1e-12


class Var:
    __slots__ = ("value", "grad", "parents", "bw", "idx")
    _counter = 0

    def __init__(self, value, parents=(), bw=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(p for p in parents if isinstance(p, Var))
        self.bw = bw
        Var._counter += 1
        self.idx = Var._counter

    def item(self) -> float:
        return float(self.value)


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _acc(var: Var, grad: np.ndarray):
    g = _unbroadcast(np.asarray(grad, dtype=np.float64), var.value.shape)
    if var.grad is None:
        var.grad = g.copy()
    else:
        var.grad = var.grad + g


def backward(root: Var):
    """Reverse sweep from a scalar root; leaf .grad fields are populated."""
    if root.value.shape != ():
        raise ValueError("backward root must be scalar")
    seen = {}
    stack = [root]
    while stack:
        v = stack.pop()
        if v.idx in seen:
            continue
        seen[v.idx] = v
        stack.extend(v.parents)
    root.grad = np.asarray(1.0)
    for v in sorted(seen.values(), key=lambda n: -n.idx):
        if v.bw is not None and v.grad is not None:
            v.bw(v.grad)


def leaf(value) -> Var:
    return Var(value)


def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = Var(av + bv, (a, b))

    def bw(g):
        if isinstance(a, Var):
            _acc(a, g)
        if isinstance(b, Var):
            _acc(b, g)
    out.bw = bw
    return out


def sub(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = Var(av - bv, (a, b))

    def bw(g):
        if isinstance(a, Var):
            _acc(a, g)
        if isinstance(b, Var):
            _acc(b, -g)
    out.bw = bw
    return out


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = Var(av * bv, (a, b))

    def bw(g):
        if isinstance(a, Var):
            _acc(a, g * bv)
        if isinstance(b, Var):
            _acc(b, g * av)
    out.bw = bw
    return out


def div(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = Var(av / bv, (a, b))

    def bw(g):
        if isinstance(a, Var):
            _acc(a, g / bv)
        if isinstance(b, Var):
            _acc(b, -g * av / (bv * bv))
    out.bw = bw
    return out


def neg(a) -> Var:
    out = Var(-_val(a), (a,))
    out.bw = lambda g: _acc(a, -g)
    return out


def relu(a) -> Var:
    av = _val(a)
    mask = av > 0  # subgradient 0 at the kink
    out = Var(np.where(mask, av, 0.0), (a,))
    out.bw = lambda g: _acc(a, g * mask)
    return out


def absval(a) -> Var:
    av = _val(a)
    s = np.sign(av)  # subgradient 0 at 0
    out = Var(np.abs(av), (a,))
    out.bw = lambda g: _acc(a, g * s)
    return out


def square(a) -> Var:
    av = _val(a)
    out = Var(av * av, (a,))
    out.bw = lambda g: _acc(a, 2.0 * av * g)
    return out


def sigmoid(a) -> Var:
    s = expit(_val(a))
    out = Var(s, (a,))
    out.bw = lambda g: _acc(a, g * s * (1.0 - s))
    return out


def log(a) -> Var:
    av = _val(a)
    out = Var(np.log(av), (a,))
    out.bw = lambda g: _acc(a, g / av)
    return out


def clamp_min(a, floor: float) -> Var:
    av = _val(a)
    mask = av > floor  # gradient passes only above the floor
    out = Var(np.where(mask, av, floor), (a,))
    out.bw = lambda g: _acc(a, g * mask)
    return out


def vsum(a, axis=None) -> Var:
    av = _val(a)
    out = Var(av.sum(axis=axis), (a,))

    def bw(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, av.shape))
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), av.shape))
    out.bw = bw
    return out


def vmean(a) -> Var:
    av = _val(a)
    return mul(vsum(a), 1.0 / av.size)


def gmax(a) -> Var:
    """Global max; gradient routes to the first argmax in raster order."""
    av = _val(a)
    flat_idx = int(np.argmax(av))
    out = Var(av.reshape(-1)[flat_idx], (a,))

    def bw(g):
        grad = np.zeros_like(av)
        grad.reshape(-1)[flat_idx] = g
        _acc(a, grad)
    out.bw = bw
    return out


def pick(a, cell) -> Var:
    """Scalar view of one field cell."""
    av = _val(a)
    cell = tuple(cell)
    out = Var(av[cell], (a,))

    def bw(g):
        grad = np.zeros_like(av)
        grad[cell] = g
        _acc(a, grad)
    out.bw = bw
    return out


def gather(a, cells) -> Var:
    """Vector of field values at the given (n, ndim) cells."""
    av = _val(a)
    idx = tuple(np.asarray(cells, dtype=np.int64).T)
    out = Var(av[idx], (a,))

    def bw(g):
        grad = np.zeros_like(av)
        np.add.at(grad, idx, g)
        _acc(a, grad)
    out.bw = bw
    return out


def maxpool_cross(a) -> Var:
    """Max over the axis cross (center + axis neighbors), outside = 0.

    Ties route the adjoint to the first window cell in raster order; the
    zero padding participates, matching outside-as-background morphology.
    """
    av = _val(a)
    offs = cross_offsets(av.ndim)
    stack = np.stack([shifted(av, off, 0.0) for off in offs])
    arg = stack.argmax(axis=0)
    out = Var(np.take_along_axis(stack, arg[None], axis=0)[0], (a,))

    def bw(g):
        grad = np.zeros_like(av)
        for k, off in enumerate(offs):
            contrib = np.where(arg == k, g, 0.0)
            grad += shifted(contrib, tuple(-o for o in off), 0.0)
        _acc(a, grad)
    out.bw = bw
    return out


def minpool_cross(a) -> Var:
    return neg(maxpool_cross(neg(a)))


def conv_ones(a, size: int) -> Var:
    """All-ones box filter with zero padding (self-adjoint)."""
    av = _val(a)
    kernel = np.ones((size,) * av.ndim)
    out = Var(ndimage.correlate(av, kernel, mode="constant", cval=0.0), (a,))
    out.bw = lambda g: _acc(a, ndimage.correlate(np.asarray(g, np.float64),
                                                 kernel, mode="constant", cval=0.0))
    return out


def softmax_last(a) -> Var:
    """Softmax along the last axis (stable)."""
    av = _val(a)
    sh = av - av.max(axis=-1, keepdims=True)
    e = np.exp(sh)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Var(s, (a,))

    def bw(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        _acc(a, s * (g - inner))
    out.bw = bw
    return out


def lse_last(a) -> Var:
    """log-sum-exp along the last axis (stable); gradient is the softmax."""
    av = _val(a)
    m = av.max(axis=-1, keepdims=True)
    s = np.exp(av - m).sum(axis=-1, keepdims=True)
    val = (m + np.log(s))[..., 0]
    soft = np.exp(av - m) / s
    out = Var(val, (a,))
    out.bw = lambda g: _acc(a, np.expand_dims(g, -1) * soft)
    return out


def addn(terms: list) -> Var:
    """Sum of scalar terms in fixed (given) order."""
    if not terms:
        return Var(0.0)
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return acc
