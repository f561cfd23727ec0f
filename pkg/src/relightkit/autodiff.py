"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery to differentiate the relighting network and its
training objectives: elementwise arithmetic, reductions, leaky rectifier,
strided/transposed convolution, 2x resampling, windowed correlation and
forward differences.  Dtype follows the inputs, so the same graph code
runs in float32 for training and float64 for finite-difference checks.

A Var wraps an ndarray; ops build a DAG only while gradients are enabled
and at least one input requires them.  `Var.backward()` runs reverse
accumulation from a scalar.
"""

import contextlib

import numpy as np

from . import kernels
from .errors import DimensionError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference/validation)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Var:
    """An ndarray plus an optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def _accum(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                node.grad = None  # free interior gradients as we go

    # Operator sugar; scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Var(shape={self.data.shape}, grad={self.requires_grad})"


def asvar(x):
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _track(*inputs):
    return _grad_enabled and any(isinstance(v, Var) and v.requires_grad for v in inputs)


def _make(data, parents, backward_fn, track):
    out = Var(data)
    if track:
        out.requires_grad = True
        out._parents = tuple(p for p in parents if isinstance(p, Var))
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = asvar(a), asvar(b)
    track = _track(a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bw, track)


def sub(a, b):
    a, b = asvar(a), asvar(b)
    track = _track(a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bw, track)


def mul(a, b):
    a, b = asvar(a), asvar(b)
    track = _track(a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bw, track)


def div(a, b):
    a, b = asvar(a), asvar(b)
    track = _track(a, b)
    inv = 1.0 / b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * inv, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data * inv * inv, b.data.shape))

    return _make(a.data * inv, (a, b), bw, track)


def absolute(a):
    a = asvar(a)
    track = _track(a)

    def bw(g):
        a._accum(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bw, track)


def square(a):
    a = asvar(a)
    track = _track(a)

    def bw(g):
        a._accum(g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), bw, track)


def mean(a):
    a = asvar(a)
    track = _track(a)
    n = a.data.size

    def bw(g):
        a._accum(np.full(a.data.shape, float(g) / n, dtype=a.data.dtype))

    return _make(a.data.mean(), (a,), bw, track)


def total(a):
    a = asvar(a)
    track = _track(a)

    def bw(g):
        a._accum(np.full(a.data.shape, float(g), dtype=a.data.dtype))

    return _make(a.data.sum(), (a,), bw, track)


def reshape(a, shape):
    a = asvar(a)
    track = _track(a)
    orig = a.data.shape

    def bw(g):
        a._accum(g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), bw, track)


def leaky_relu(a, slope=0.2):
    a = asvar(a)
    track = _track(a)
    pos = a.data > 0

    def bw(g):
        a._accum(g * np.where(pos, 1.0, slope).astype(a.data.dtype))

    return _make(np.where(pos, a.data, slope * a.data), (a,), bw, track)


def conv2d(x, w, b=None, stride=1, pad=1):
    """Correlation layer; `w` is (kh, kw, c_in, c_out), `b` is (c_out,)."""
    x, w = asvar(x), asvar(w)
    b = asvar(b) if b is not None else None
    track = _track(x, w, b) if b is not None else _track(x, w)
    kh, kw = w.data.shape[:2]
    y = kernels.conv2d(x.data, w.data, stride, pad)
    if b is not None:
        y = y + b.data

    def bw(g):
        if x.requires_grad:
            x._accum(kernels.conv2d_input_grad(g, w.data, stride, pad, x.data.shape[1:3]))
        if w.requires_grad:
            w._accum(kernels.conv2d_weight_grad(x.data, g, kh, kw, stride, pad))
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 1, 2)))

    parents = (x, w, b) if b is not None else (x, w)
    return _make(y, parents, bw, track)


def conv_transpose2d(x, w, b=None, stride=2, pad=1):
    """Transposed correlation; `w` is (kh, kw, c_out, c_in).

    Forward is the adjoint of a stride-s conv, so output dims are
    stride*(h-1) + kh - 2*pad.
    """
    x, w = asvar(x), asvar(w)
    b = asvar(b) if b is not None else None
    track = _track(x, w, b) if b is not None else _track(x, w)
    kh, kw = w.data.shape[:2]
    h, wd = x.data.shape[1:3]
    out_hw = kernels.tconv_out_hw(h, wd, kh, kw, stride, pad)
    y = kernels.conv2d_input_grad(x.data, w.data, stride, pad, out_hw)
    if b is not None:
        y = y + b.data

    def bw(g):
        if x.requires_grad:
            x._accum(kernels.conv2d(g, w.data, stride, pad))
        if w.requires_grad:
            w._accum(kernels.conv2d_weight_grad(g, x.data, kh, kw, stride, pad))
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 1, 2)))

    parents = (x, w, b) if b is not None else (x, w)
    return _make(y, parents, bw, track)


def upsample2x(x):
    """Bilinear 2x upsampling (align-corners-off) on NHWC."""
    x = asvar(x)
    track = _track(x)

    def bw(g):
        x._accum(kernels.up2x_adjoint(g))

    return _make(kernels.up2x(x.data), (x,), bw, track)


def avgpool2x(x):
    """2x2 mean pooling on NHWC."""
    x = asvar(x)
    track = _track(x)

    def bw(g):
        x._accum(kernels.avgpool2x_adjoint(g))

    return _make(kernels.avgpool2x(x.data), (x,), bw, track)


def blur_hw_valid(x, kernel1d):
    """Separable valid-mode correlation over the H and W axes (axes -3, -2)."""
    x = asvar(x)
    track = _track(x)
    k = np.asarray(kernel1d, dtype=x.data.dtype)
    ax_h = x.data.ndim - 3
    ax_w = x.data.ndim - 2
    y = kernels.corr1d_valid(kernels.corr1d_valid(x.data, k, ax_h), k, ax_w)

    def bw(g):
        x._accum(kernels.corr1d_valid_adjoint(kernels.corr1d_valid_adjoint(g, k, ax_w), k, ax_h))

    return _make(y, (x,), bw, track)


def forward_diff(x, axis):
    """x[..., 1:, ...] - x[..., :-1, ...] along `axis`."""
    x = asvar(x)
    track = _track(x)
    ax = axis % x.data.ndim
    n = x.data.shape[ax]
    if n < 2:
        raise DimensionError(f"forward_diff needs length >= 2 along axis {axis}")

    def sl(s):
        ix = [slice(None)] * x.data.ndim
        ix[ax] = s
        return tuple(ix)

    def bw(g):
        dg = np.zeros_like(x.data)
        dg[sl(slice(1, None))] += g
        dg[sl(slice(0, n - 1))] -= g
        x._accum(dg)

    return _make(x.data[sl(slice(1, None))] - x.data[sl(slice(0, n - 1))], (x,), bw, track)
