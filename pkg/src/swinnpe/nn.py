"""Parameter containers and the small set of layers the codec is built from."""

from __future__ import annotations

import struct

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"SNPW"
CHECKPOINT_VERSION = 1


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Base class; parameters are discovered from public attributes in definition order.

    Attributes holding a :class:`Parameter` or a :class:`Module` contribute to
    :meth:`named_parameters`; attributes whose names start with ``_`` are
    ignored, which lets a module keep a private list of children that are also
    registered under explicit names.
    """

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        if strict:
            missing = set(params) - set(state)
            unexpected = set(state) - set(params)
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}")
        for name, arr in state.items():
            if name not in params:
                continue
            p = params[name]
            arr = np.asarray(arr, dtype=T.DTYPE)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, c_in, c_out, rng, bias=True):
        self.weight = Parameter(uniform_init(rng, (c_in, c_out), c_in))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, c, eps=1e-6):
        self.gamma = Parameter(np.ones(c))
        self.beta = Parameter(np.zeros(c))
        self._eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self._eps)


class DSConv(Module):
    """Depthwise-separable convolution: ``k x k`` per channel, then ``1 x 1`` with bias."""

    def __init__(self, c_in, c_out, k, rng, padding="zeros"):
        if k % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.depthwise = Parameter(uniform_init(rng, (k, k, c_in), k * k))
        self.pointwise = Parameter(uniform_init(rng, (c_in, c_out), c_in))
        self.bias = Parameter(np.zeros(c_out))
        self.padding = padding

    def forward(self, x):
        return T.depthwise_separable_conv(x, self.depthwise, self.pointwise, self.bias, self.padding)


# -- checkpoint file ---------------------------------------------------------
def dumps_state(state):
    """Serialize ``{name: array}`` to the SNPW byte format, in the given order."""
    out = [CHECKPOINT_MAGIC, bytes([CHECKPOINT_VERSION])]
    for name, arr in state.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads_state(blob):
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not an SNPW checkpoint (bad magic)")
    if len(blob) < 5 or blob[4] != CHECKPOINT_VERSION:
        raise ValueError("unsupported SNPW checkpoint version")
    state = {}
    pos = 5
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            if len(name.encode("utf-8")) != n:
                raise ValueError("truncated name")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            end = pos + 8 * count
            if end > len(blob):
                raise ValueError(f"truncated values for {name}")
            state[name] = np.frombuffer(blob[pos:end], dtype="<f8").astype(T.DTYPE).reshape(shape)
            pos = end
    except struct.error as exc:
        raise ValueError("truncated SNPW checkpoint") from exc
    return state


def save_checkpoint(module, path):
    with open(path, "wb") as fh:
        fh.write(dumps_state(module.state_dict()))


def load_checkpoint(module, path):
    with open(path, "rb") as fh:
        module.load_state_dict(loads_state(fh.read()))
