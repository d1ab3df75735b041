"""Dense float64 tensors with reverse-mode differentiation.

Every operation returns a new :class:`Tensor`; when any input requires a
gradient the result records its parents and a closure mapping the output
gradient to input gradients.  :meth:`Tensor.backward` walks the recorded graph
in reverse topological order.

Image-like tensors are channels-last (``[..., H, W, C]``), and convolution is
cross-correlation.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy import special

DTYPE = np.float64
_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # -- operators --------------------------------------------------------
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
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    # -- differentiation --------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf.

        Gradients accumulate; callers zero them between steps.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=DTYPE)
            if grad.shape != self.shape:
                raise ValueError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")
        if not self.requires_grad:
            return

        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by tensor operation")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ValueError(f"shapes {shapes} are not broadcast-compatible") from exc


# -- elementwise binary ------------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    if np.any(b.data == 0):
        raise ZeroDivisionError("division by a tensor containing zeros")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return _make(out, (a, b), backward)


def maximum(a, b):
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    pick_a = a.data >= b.data
    sa, sb = a.shape, b.shape
    return _make(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (unbroadcast(g * pick_a, sa), unbroadcast(g * ~pick_a, sb)),
    )


# -- elementwise unary -------------------------------------------------------
def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)
    ad = a.data
    return _make(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative values")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive values")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def log2(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log2 of non-positive values")
    ad = a.data
    return _make(np.log2(ad), (a,), lambda g: (g / (ad * np.log(2.0)),))


def absolute(a):
    a = as_tensor(a)
    s = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * s,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = special.expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return _make(out, (a,), lambda g: (g * special.expit(ad),))


def gelu(a):
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    ad = a.data
    cdf = special.ndtr(ad)
    return _make(ad * cdf, (a,), lambda g: (g * (cdf + ad * _INV_SQRT_2PI * np.exp(-0.5 * ad * ad)),))


def normal_cdf(a):
    """Standard normal CDF, Phi(a)."""
    a = as_tensor(a)
    ad = a.data
    return _make(special.ndtr(ad), (a,), lambda g: (g * _INV_SQRT_2PI * np.exp(-0.5 * ad * ad),))


def clip(a, lo=None, hi=None):
    """Clamp values; the gradient is zero where clamping is active."""
    a = as_tensor(a)
    ad = a.data
    out = np.clip(ad, lo, hi)
    inside = np.ones(ad.shape, dtype=bool)
    if lo is not None:
        inside &= ad >= lo
    if hi is not None:
        inside &= ad <= hi
    return _make(out, (a,), lambda g: (g * inside,))


# -- reductions --------------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


# -- shape manipulation ------------------------------------------------------
def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, index):
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(index)
    out = a.data[index]
    if basic:
        out = out.copy()

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.asarray(out), (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def split(a, sizes, axis=-1):
    """Split along ``axis`` into pieces of the given sizes."""
    a = as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not cover extent {a.shape[axis]}")
    out, start = [], 0
    ax = axis % a.ndim
    for n in sizes:
        idx = (slice(None),) * ax + (slice(start, start + n),)
        out.append(getitem(a, idx))
        start += n
    return out


def roll(a, shifts, axes):
    """Cyclic shift (torus roll) along the given axes."""
    a = as_tensor(a)
    shifts = tuple(shifts)
    axes = tuple(axes)
    back = tuple(-s for s in shifts)
    return _make(np.roll(a.data, shifts, axes), (a,), lambda g: (np.roll(g, back, axes),))


def pad2d(x, top, bottom, left, right, mode="zeros"):
    """Pad the two spatial axes of a ``[..., H, W, C]`` tensor."""
    x = as_tensor(x)
    if mode not in ("zeros", "circular"):
        raise ValueError(f"unknown padding mode {mode!r}")
    if top == bottom == left == right == 0:
        return x
    H, W = x.shape[-3], x.shape[-2]
    if mode == "zeros":
        widths = [(0, 0)] * (x.ndim - 3) + [(top, bottom), (left, right), (0, 0)]
        out = np.pad(x.data, widths)

        def backward(g):
            return (g[..., top : top + H, left : left + W, :],)

        return _make(out, (x,), backward)

    ih = np.arange(-top, H + bottom) % H
    iw = np.arange(-left, W + right) % W
    out = x.data[..., ih, :, :][..., iw, :]
    shape = x.shape

    def backward(g):
        gh = np.zeros(shape[:-3] + (H, g.shape[-2], shape[-1]), dtype=DTYPE)
        np.add.at(gh, (Ellipsis, ih, slice(None), slice(None)), g)
        gx = np.zeros(shape, dtype=DTYPE)
        np.add.at(gx, (Ellipsis, iw, slice(None)), gh)
        return (gx,)

    return _make(out, (x,), backward)


# -- linear algebra ----------------------------------------------------------
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis; ``weight`` is ``[C_in, C_out]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear expects last dim {weight.shape[0]}, got {x.shape[-1]}")
    xd, wd = x.data, weight.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = (x2 @ wd).reshape(lead + (wd.shape[1],))
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = parents + (bias,)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        grads = [(g2 @ wd.T).reshape(xd.shape), x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize over the last axis, then apply ``gamma``/``beta``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    n = xd.shape[-1]

    def backward(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, n)
        return gx, (flat_g * xhat.reshape(-1, n)).sum(axis=0), flat_g.sum(axis=0)

    return _make(xhat * gd + beta.data, (x, gamma, beta), backward)


# -- convolution -------------------------------------------------------------
def _same_padding(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _padded(x, kh, kw, stride, padding):
    top, bottom = _same_padding(x.shape[-3], kh, stride)
    left, right = _same_padding(x.shape[-2], kw, stride)
    if padding == "circular" and max(top, bottom) > x.shape[-3] or padding == "circular" and max(left, right) > x.shape[-2]:
        raise ValueError("kernel larger than the circularly padded input")
    xp = pad2d(x, top, bottom, left, right, padding)
    if xp.shape[-3] < kh or xp.shape[-2] < kw:
        raise ValueError("kernel larger than padded input")
    return xp


def conv2d(x, kernel, bias=None, stride=1, padding="zeros"):
    """Dense 2D cross-correlation with "same" padding.

    ``x`` is ``[..., H, W, C_in]`` and ``kernel`` is ``[kh, kw, C_in, C_out]``;
    the output is ``[..., ceil(H/stride), ceil(W/stride), C_out]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ValueError(f"conv2d expects {cin} input channels, got {x.shape[-1]}")
    xp = _padded(x, kh, kw, stride, padding)
    Ho, Wo = -(-x.shape[-3] // stride), -(-x.shape[-2] // stride)
    xd, kd = xp.data, kernel.data
    taps = [
        (i, j, (Ellipsis, slice(i, i + (Ho - 1) * stride + 1, stride), slice(j, j + (Wo - 1) * stride + 1, stride), slice(None)))
        for i in range(kh)
        for j in range(kw)
    ]
    out = np.zeros(xd.shape[:-3] + (Ho, Wo, cout), dtype=DTYPE)
    for i, j, sl in taps:
        out += xd[sl] @ kd[i, j]
    parents = (xp, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        parents += (bias,)

    def backward(g):
        gx = np.zeros(xd.shape, dtype=DTYPE)
        gk = np.zeros(kd.shape, dtype=DTYPE)
        g2 = g.reshape(-1, cout)
        for i, j, sl in taps:
            gx[sl] += g @ kd[i, j].T
            gk[i, j] = xd[sl].reshape(-1, cin).T @ g2
        grads = (gx, gk)
        if bias is not None:
            grads += (g2.sum(axis=0),)
        return grads

    return _make(out, parents, backward)


def depthwise_conv2d(x, kernel, bias=None, padding="zeros"):
    """Per-channel 2D cross-correlation, stride 1, "same" padding.

    ``kernel`` is ``[kh, kw, C]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    kh, kw, c = kernel.shape
    if x.shape[-1] != c:
        raise ValueError(f"depthwise kernel has {c} channels, input has {x.shape[-1]}")
    xp = _padded(x, kh, kw, 1, padding)
    H, W = x.shape[-3], x.shape[-2]
    xd, kd = xp.data, kernel.data
    taps = [(i, j, (Ellipsis, slice(i, i + H), slice(j, j + W), slice(None))) for i in range(kh) for j in range(kw)]
    out = np.zeros(xd.shape[:-3] + (H, W, c), dtype=DTYPE)
    for i, j, sl in taps:
        out += xd[sl] * kd[i, j]
    parents = (xp, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        parents += (bias,)

    def backward(g):
        gx = np.zeros(xd.shape, dtype=DTYPE)
        gk = np.zeros(kd.shape, dtype=DTYPE)
        g2 = g.reshape(-1, c)
        for i, j, sl in taps:
            gx[sl] += g * kd[i, j]
            gk[i, j] = (xd[sl].reshape(-1, c) * g2).sum(axis=0)
        grads = (gx, gk)
        if bias is not None:
            grads += (g2.sum(axis=0),)
        return grads

    return _make(out, parents, backward)


def depthwise_separable_conv(x, depthwise, pointwise, bias=None, padding="zeros"):
    """Depthwise ``k x k`` convolution followed by a ``1 x 1`` channel mix.

    ``pointwise`` may be ``[1, 1, C, C_out]`` or ``[C, C_out]``.
    """
    depthwise, pointwise = as_tensor(depthwise), as_tensor(pointwise)
    if depthwise.shape[0] % 2 == 0 or depthwise.shape[1] % 2 == 0:
        raise ValueError("depthwise kernel size must be odd")
    pw = pointwise if pointwise.ndim == 2 else reshape(pointwise, pointwise.shape[-2:])
    if pw.shape[0] != depthwise.shape[-1]:
        raise ValueError("pointwise input channels do not match depthwise channels")
    return linear(depthwise_conv2d(x, depthwise, padding=padding), pw, bias)


# -- misc --------------------------------------------------------------------
def stop_gradient(a):
    return Tensor(as_tensor(a).data)


def where(cond, a, b):
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return _make(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (unbroadcast(np.where(cond, g, 0.0), sa), unbroadcast(np.where(cond, 0.0, g), sb)),
    )
