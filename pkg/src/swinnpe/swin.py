"""Shifted-window attention blocks.

Two block flavours share one layout (norm, attention, residual, norm, MLP,
residual) and differ only in how keys, queries and values are produced:

* :class:`ConvSwinBlock` runs a depthwise-separable convolution per projection
  over the whole 2D feature map before windows are cut, and has no positional
  term in the attention logits.
* :class:`BaselineSwinBlock` uses position-wise linear projections plus a
  learned relative-position bias table, the classic Swin recipe.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .nn import DSConv, LayerNorm, Linear, Module, Parameter

MASK_VALUE = -1e9


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    heads: int = 0
    window: int = 8
    shifted: bool = False
    kernel: int = 3
    projection: str = "conv-dsep"
    padding: str = "zeros"
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.heads == 0:
            object.__setattr__(self, "heads", default_heads(self.channels))
        if self.channels % self.heads:
            raise ValueError(f"{self.heads} heads do not divide {self.channels} channels")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("kernel size must be odd and positive")
        if self.projection not in ("conv-dsep", "linear-rpe"):
            raise ValueError(f"unknown projection kind {self.projection!r}")
        if self.window < 1:
            raise ValueError("window must be positive")

    @property
    def head_dim(self):
        return self.channels // self.heads

    @property
    def shift(self):
        return self.window // 2 if self.shifted else 0


def default_heads(channels):
    """One head per 32 channels, at least one, and always a divisor of ``channels``."""
    h = max(1, channels // 32)
    while channels % h:
        h -= 1
    return h


def effective_window(H, W, window, shift):
    """Window and shift actually used on an ``H x W`` map.

    When the map is no larger than the window the whole map becomes a single
    window and shifting is switched off.
    """
    if min(H, W) <= window:
        return min(H, W), 0
    return window, shift


# -- window geometry ---------------------------------------------------------
def window_partition(x, w):
    """``[..., H, W, C]`` -> ``[B*nW, w*w, C]`` with windows in row-major order."""
    x = T.as_tensor(x)
    *lead, H, W, C = x.shape
    if H % w or W % w:
        raise ValueError(f"feature map {H}x{W} is not divisible by window {w}")
    n = int(np.prod(lead)) if lead else 1
    x = x.reshape(n, H // w, w, W // w, w, C)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n * (H // w) * (W // w), w * w, C)


def window_reverse(windows, w, H, W, lead=()):
    """Inverse of :func:`window_partition`; ``lead`` restores batch axes."""
    windows = T.as_tensor(windows)
    C = windows.shape[-1]
    n = int(np.prod(lead)) if lead else 1
    x = windows.reshape(n, H // w, W // w, w, w, C)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(tuple(lead) + (H, W, C))


def cyclic_shift(x, dy, dx):
    """Torus roll of the two spatial axes of ``[..., H, W, C]``."""
    return T.roll(x, (dy, dx), (-3, -2))


@lru_cache(maxsize=None)
def shift_mask(H, W, w, s):
    """Additive attention mask for shifted windows, ``[nW, w*w, w*w]``.

    Tokens that come from different regions of the unshifted map get
    ``MASK_VALUE``; everything else gets 0.
    """
    labels = np.zeros((H, W))
    bands = (slice(0, -w), slice(-w, -s), slice(-s, None))
    count = 0
    for hs in bands:
        for ws in bands:
            labels[hs, ws] = count
            count += 1
    win = labels.reshape(H // w, w, W // w, w).transpose(0, 2, 1, 3).reshape(-1, w * w)
    mask = np.where(win[:, :, None] != win[:, None, :], MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=None)
def relative_position_index(w, table_window=None):
    """Map each (query, key) token pair of a ``w x w`` window to a bias-table row.

    The table is sized for ``table_window`` (defaults to ``w``) so that a
    shrunken effective window can index a table built for the nominal one.
    """
    tw = table_window or w
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (tw - 1)
    idx = rel[0] * (2 * tw - 1) + rel[1]
    idx.setflags(write=False)
    return idx


# -- attention ---------------------------------------------------------------
def split_heads(x, heads):
    B, L, C = x.shape
    return x.reshape(B, L, heads, C // heads).transpose(0, 2, 1, 3)


def merge_heads(x):
    B, h, L, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, h * d)


def window_attention(q, k, v, heads, mask=None, position_bias=None, return_weights=False):
    """Scaled dot-product attention inside each window.

    ``q``, ``k``, ``v`` are ``[B, L, C]`` with ``B = batch * nW``. ``mask`` is
    ``[nW, L, L]`` and ``position_bias`` is ``[heads, L, L]``.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    B, L, C = q.shape
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = T.matmul(qh, T.swapaxes(kh, -1, -2)) * (1.0 / np.sqrt(C // heads))
    if position_bias is not None:
        scores = scores + position_bias
    if mask is not None:
        mask = np.asarray(mask)
        nW = mask.shape[0]
        if mask.shape != (nW, L, L) or B % nW:
            raise ValueError(f"mask shape {mask.shape} does not fit {B} windows of {L} tokens")
        scores = (scores.reshape(B // nW, nW, heads, L, L) + mask[None, :, None]).reshape(B, heads, L, L)
    weights = T.softmax(scores, axis=-1)
    out = merge_heads(T.matmul(weights, vh))
    return (out, weights) if return_weights else out


class Mlp(Module):
    def __init__(self, c, ratio, rng):
        self.fc1 = Linear(c, c * ratio, rng)
        self.fc2 = Linear(c * ratio, c, rng)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class _SwinBlockBase(Module):
    def __init__(self, cfg, rng):
        self._cfg = cfg
        c = cfg.channels
        self.norm1 = LayerNorm(c)
        self._build_projection(cfg, rng)
        self.proj = Linear(c, c, rng)
        self.norm2 = LayerNorm(c)
        self.mlp = Mlp(c, cfg.mlp_ratio, rng)

    @property
    def cfg(self):
        return self._cfg

    def qkv(self, x):
        raise NotImplementedError

    def position_bias(self, w):
        return None

    def attention(self, x):
        """Attention branch on ``[N, H, W, C]`` (before the residual add)."""
        N, H, W, C = x.shape
        w, s = effective_window(H, W, self.cfg.window, self.cfg.shift)
        q, k, v = self.qkv(x)
        mask = None
        if s:
            q, k, v = (cyclic_shift(t, -s, -s) for t in (q, k, v))
            mask = shift_mask(H, W, w, s)
        out = window_attention(
            window_partition(q, w),
            window_partition(k, w),
            window_partition(v, w),
            self.cfg.heads,
            mask=mask,
            position_bias=self.position_bias(w),
        )
        out = window_reverse(out, w, H, W, (N,))
        if s:
            out = cyclic_shift(out, s, s)
        return self.proj(out)

    def forward(self, x):
        squeeze = x.ndim == 3
        if squeeze:
            x = x.reshape((1,) + x.shape)
        x = x + self.attention(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x.reshape(x.shape[1:]) if squeeze else x


class ConvSwinBlock(_SwinBlockBase):
    """Swin block whose K, Q, V come from depthwise-separable convolutions."""

    def _build_projection(self, cfg, rng):
        c, k = cfg.channels, cfg.kernel
        self.q_proj = DSConv(c, c, k, rng, cfg.padding)
        self.k_proj = DSConv(c, c, k, rng, cfg.padding)
        self.v_proj = DSConv(c, c, k, rng, cfg.padding)

    def qkv(self, x):
        return self.q_proj(x), self.k_proj(x), self.v_proj(x)


class BaselineSwinBlock(_SwinBlockBase):
    """Swin block with linear projections and a relative-position bias table."""

    def _build_projection(self, cfg, rng):
        c, w = cfg.channels, cfg.window
        self.q_proj = Linear(c, c, rng)
        self.k_proj = Linear(c, c, rng)
        self.v_proj = Linear(c, c, rng)
        self.rpe_table = Parameter(0.02 * rng.standard_normal(((2 * w - 1) ** 2, cfg.heads)))

    def qkv(self, x):
        return self.q_proj(x), self.k_proj(x), self.v_proj(x)

    def position_bias(self, w):
        idx = relative_position_index(w, self.cfg.window)
        bias = self.rpe_table[idx.reshape(-1)]
        return bias.reshape(w * w, w * w, self.cfg.heads).transpose(2, 0, 1)


def make_block(cfg, rng):
    cls = ConvSwinBlock if cfg.projection == "conv-dsep" else BaselineSwinBlock
    return cls(cfg, rng)
