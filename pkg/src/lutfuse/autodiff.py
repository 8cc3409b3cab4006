"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery to differentiate the weight-prediction network and
its perceptual loss: broadcast arithmetic, matmul, reductions, activations,
same-padded stride-1 convolution with dilation, sliding-window patch
extraction, and a frame-axis softmax. Values are float64 throughout.

Usage: wrap arrays in Value (parameters with requires_grad=True), compose,
then call backward() on a scalar result; gradients accumulate in .grad.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that skips taping, for inference-only forwards."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Value:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    # -- operator sugar -----------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar root")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
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


def _wrap(x):
    return x if isinstance(x, Value) else Value(x)


def _needs(*vals):
    return any(v.requires_grad for v in vals)


def _node(data, parents, backward):
    """Create a result node, taping only when gradients can flow."""
    if _GRAD_ENABLED and _needs(*parents):
        out = Value(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward
        return out
    return Value(data)


def _accum(val, g):
    if not val.requires_grad:
        return
    if val.grad is None:
        val.grad = np.zeros_like(val.data)
    val.grad += g


def _unbroadcast(g, shape):
    """Reduce an upstream gradient back to a broadcast operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out_data, (a, b), backward)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(out_data, (a, b), backward)


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    a = _wrap(a)
    in_shape = a.data.shape
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(in_shape))

    return _node(out_data, (a,), backward)


def transpose(a, axes):
    a = _wrap(a)
    inverse = np.argsort(axes)
    out_data = a.data.transpose(axes)

    def backward(g):
        _accum(a, g.transpose(inverse))

    return _node(out_data, (a,), backward)


def concat(vals, axis):
    vals = [_wrap(v) for v in vals]
    sizes = [v.data.shape[axis] for v in vals]
    out_data = np.concatenate([v.data for v in vals], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for v, lo, hi in zip(vals, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(v, g[tuple(idx)])

    return _node(out_data, tuple(vals), backward)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def vsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(out_data, (a,), backward)


def vmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / out_data.size

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / count)

    return _node(out_data, (a,), backward)


def vmax(a, axis, keepdims=False):
    a = _wrap(a)
    mx = a.data.max(axis=axis, keepdims=True)
    out_data = mx if keepdims else np.squeeze(mx, axis=axis)
    mask = a.data == mx
    ties = mask.sum(axis=axis, keepdims=True)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, mask * (g / ties))

    return _node(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def relu(a):
    a = _wrap(a)
    mask = a.data > 0
    out_data = a.data * mask

    def backward(g):
        _accum(a, g * mask)

    return _node(out_data, (a,), backward)


def sigmoid(a):
    a = _wrap(a)
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backward)


def softmax(a, axis):
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _node(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# Convolution and patch extraction
# ---------------------------------------------------------------------------

def _im2col(padded, kh, kw, dilation, out_h, out_w):
    n, cin = padded.shape[:2]
    cols = np.empty((n, cin, kh, kw, out_h, out_w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            r = i * dilation
            c = j * dilation
            cols[:, :, i, j] = padded[:, :, r:r + out_h, c:c + out_w]
    return cols.reshape(n, cin * kh * kw, out_h * out_w)


def conv2d(x, weight, bias=None, dilation=1):
    """Stride-1 cross-correlation with zero 'same' padding.

    x: (N, Cin, H, W); weight: (Cout, Cin, kh, kw); bias: (Cout,) or None.
    Output spatial size equals input spatial size (odd kernels).
    """
    x, weight = _wrap(x), _wrap(weight)
    bias = _wrap(bias) if bias is not None else None
    n, cin, h, w = x.data.shape
    cout, cin_k, kh, kw = weight.data.shape
    if cin != cin_k:
        raise ValueError(f"conv2d channel mismatch: input {cin}, kernel {cin_k}")
    ph = dilation * (kh // 2)
    pw = dilation * (kw // 2)
    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(padded, kh, kw, dilation, h, w)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out_flat = np.matmul(wmat, cols)
    if bias is not None:
        out_flat = out_flat + bias.data[:, None]
    out_data = out_flat.reshape(n, cout, h, w)

    def backward(g):
        g_flat = g.reshape(n, cout, h * w)
        if bias is not None:
            _accum(bias, g_flat.sum(axis=(0, 2)))
        if weight.requires_grad:
            gw = np.einsum("nop,nkp->ok", g_flat, cols)
            _accum(weight, gw.reshape(weight.data.shape))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g_flat)
            gcols = gcols.reshape(n, cin, kh, kw, h, w)
            gpad = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    r = i * dilation
                    c = j * dilation
                    gpad[:, :, r:r + h, c:c + w] += gcols[:, :, i, j]
            _accum(x, gpad[:, :, ph:ph + h, pw:pw + w])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out_data, parents, backward)


def extract_patches(a, window):
    """All window x window patches of a 2-D array, flattened to (P, window²)."""
    a = _wrap(a)
    h, w = a.data.shape
    oh = h - window + 1
    ow = w - window + 1
    view = np.lib.stride_tricks.sliding_window_view(a.data, (window, window))
    out_data = view.reshape(oh * ow, window * window).copy()

    def backward(g):
        gr = g.reshape(oh, ow, window, window)
        ga = np.zeros((h, w))
        for i in range(window):
            for j in range(window):
                ga[i:i + oh, j:j + ow] += gr[:, :, i, j]
        _accum(a, ga)

    return _node(out_data, (a,), backward)
