"""Quantization and probability models for the latent and hyper-latent."""

from __future__ import annotations

import numpy as np
from scipy import special

from . import tensor as T
from .nn import Linear, Module, Parameter
from .range_coder import quantize_pmf

PROB_FLOOR = 2.0**-50
SIGMA_FLOOR = 1e-6
LOG_SCALE_BOUND = 10.0
SUPPORT = 64  # coded integers per element: [-SUPPORT, SUPPORT] plus two tail symbols


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5) + 0.0  # +0.0 folds -0.0 into 0.0


def quantize_inference(y, mu):
    """``round(y - mu) + mu`` on arrays; the offset from ``mu`` is integer-valued."""
    y, mu = np.asarray(y, dtype=np.float64), np.asarray(mu, dtype=np.float64)
    return round_half_away(y - mu) + mu


def quantize_train(y, rng):
    """Additive uniform noise in [-1/2, 1/2); the gradient passes straight through."""
    y = T.as_tensor(y)
    return y + rng.uniform(-0.5, 0.5, size=y.shape)


def gaussian_bits(v, mu, sigma):
    """Elementwise code length (bits) of ``v`` under a unit-bin Gaussian around ``mu``."""
    sigma = T.maximum(sigma, SIGMA_FLOOR)
    d = T.absolute(T.sub(v, mu))
    upper = T.normal_cdf((0.5 - d) / sigma)
    lower = T.normal_cdf((-0.5 - d) / sigma)
    p = T.maximum(upper - lower, PROB_FLOOR)
    return -T.log2(p)


def gaussian_bits_np(v, mu, sigma):
    d = np.abs(np.asarray(v) - mu)
    s = np.maximum(sigma, SIGMA_FLOOR)
    p = special.ndtr((0.5 - d) / s) - special.ndtr((-0.5 - d) / s)
    return -np.log2(np.maximum(p, PROB_FLOOR))


def gaussian_pmf(sigma, support=SUPPORT):
    """Per-element pmf over ``[-support, support]`` followed by lower and upper tail mass.

    Returns ``[M, 2*support + 3]`` for ``M`` scales.  The offset from the mean
    is what gets coded, so the table depends on the scale alone.
    """
    s = np.maximum(np.asarray(sigma, dtype=np.float64).reshape(-1, 1), SIGMA_FLOOR)
    q = np.abs(np.arange(-support, support + 1, dtype=np.float64))[None, :]
    central = special.ndtr((0.5 - q) / s) - special.ndtr((-0.5 - q) / s)
    tail = special.ndtr(-(support + 0.5) / s)
    pmf = np.concatenate([central, tail, tail], axis=1)
    return np.maximum(pmf, PROB_FLOOR)


def symbol_index(q, support=SUPPORT):
    """Alphabet index for integer offsets ``q`` (tails map to the two escape slots)."""
    q = np.asarray(q, dtype=np.int64)
    idx = q + support
    idx = np.where(q < -support, 2 * support + 1, idx)
    idx = np.where(q > support, 2 * support + 2, idx)
    return idx


class FactorizedPrior(Module):
    """Learned per-channel cumulative density for the hyper-latent.

    Each channel's cumulative is a chain of small affine maps with
    softplus-positive matrices and tanh gates, so it is nondecreasing by
    construction; a final sigmoid maps logits to ``[0, 1]``.
    """

    def __init__(self, channels, filters=(3, 3, 3), init_scale=10.0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self._channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self._depth = len(filters) + 1
        for i in range(self._depth):
            init = np.log(np.expm1(1.0 / scale / dims[i + 1]))
            setattr(self, f"matrix{i}", Parameter(np.full((channels, dims[i + 1], dims[i]), init)))
            setattr(self, f"bias{i}", Parameter(rng.uniform(-0.5, 0.5, size=(channels, dims[i + 1], 1))))
            if i < len(filters):
                setattr(self, f"factor{i}", Parameter(np.zeros((channels, dims[i + 1], 1))))

    @property
    def channels(self):
        return self._channels

    def logits(self, v):
        """Cumulative logits for ``v`` shaped ``[C, 1, M]``."""
        x = v
        for i in range(self._depth):
            x = T.matmul(T.softplus(getattr(self, f"matrix{i}")), x) + getattr(self, f"bias{i}")
            if i < self._depth - 1:
                x = x + T.tanh(getattr(self, f"factor{i}")) * T.tanh(x)
        return x

    def _logits_np(self, v):
        x = v
        for i in range(self._depth):
            x = np.logaddexp(0.0, getattr(self, f"matrix{i}").data) @ x + getattr(self, f"bias{i}").data
            if i < self._depth - 1:
                x = x + np.tanh(getattr(self, f"factor{i}").data) * np.tanh(x)
        return x

    def cdf(self, v):
        """``c(v)`` per channel for numpy ``v`` shaped ``[C, M]``."""
        v = np.asarray(v, dtype=np.float64)
        return special.expit(self._logits_np(v[:, None, :])[:, 0, :])

    def _to_channel_major(self, v):
        v = T.as_tensor(v)
        C = v.shape[-1]
        if C != self._channels:
            raise ValueError(f"expected {self._channels} channels, got {C}")
        return v.reshape(-1, C).transpose(1, 0).reshape(C, 1, -1), v.shape

    def likelihood(self, v):
        """Probability mass of the unit bin around each ``v`` (channels-last input)."""
        cv, shape = self._to_channel_major(v)
        lower = self.logits(cv - 0.5)
        upper = self.logits(cv + 0.5)
        # evaluate on the side of the sigmoid where it is far from 1
        sign = np.where(lower.data + upper.data > 0, -1.0, 1.0)
        p = T.absolute(T.sigmoid(upper * sign) - T.sigmoid(lower * sign))
        p = T.maximum(p, PROB_FLOOR)
        C = shape[-1]
        return p.reshape(C, -1).transpose(1, 0).reshape(shape)

    def bits(self, v):
        return -T.log2(self.likelihood(v))

    def medians(self, iters=60):
        """Per-channel ``v`` with ``c(v) = 1/2``, found by bisection."""
        lo = np.full(self._channels, -1e3)
        hi = np.full(self._channels, 1e3)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            above = self._logits_np(mid[:, None, None])[:, 0, 0] > 0
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        return 0.5 * (lo + hi)

    def pmf(self, channel=None, support=SUPPORT, offsets=None):
        """Discrete pmf over ``[-support, support]`` around each channel's median, plus two tails.

        Returns ``[C, 2*support + 3]`` (or one row when ``channel`` is given).
        """
        med = self.medians() if offsets is None else np.asarray(offsets, dtype=np.float64)
        n = np.arange(-support, support + 1, dtype=np.float64)
        edges = med[:, None] + np.concatenate([n - 0.5, [support + 0.5]])[None, :]
        logits = self._logits_np(edges[:, None, :])[:, 0, :]
        c = special.expit(logits)
        cneg = special.expit(-logits)
        central = np.where(logits[:, 1:] + logits[:, :-1] > 0, cneg[:, :-1] - cneg[:, 1:], c[:, 1:] - c[:, :-1])
        lower_tail = c[:, :1]
        upper_tail = cneg[:, -1:]
        if np.any(central.sum(axis=1) <= 0) or np.any(~np.isfinite(central)):
            raise ValueError("degenerate cumulative: no probability mass inside the coded support")
        pmf = np.concatenate([central, lower_tail, upper_tail], axis=1)
        pmf = np.maximum(pmf, PROB_FLOOR)
        return pmf if channel is None else pmf[channel]

    def quantized_cdfs(self, support=SUPPORT, offsets=None):
        return quantize_pmf(self.pmf(support=support, offsets=offsets))


def factorized_bits(prior, v):
    return prior.bits(v)


class SlicePredictor(Module):
    def __init__(self, c_in, width, rng):
        self.fc1 = Linear(c_in, 2 * width, rng)
        self.fc2 = Linear(2 * width, 2 * width, rng)
        self._width = width

    def forward(self, x):
        out = self.fc2(T.gelu(self.fc1(x)))
        mu, raw = T.split(out, [self._width, self._width], axis=-1)
        sigma = T.maximum(T.exp(T.clip(raw, -LOG_SCALE_BOUND, LOG_SCALE_BOUND)), SIGMA_FLOOR)
        return mu, sigma


class ChannelAutoregressive(Module):
    """Per-slice Gaussian parameter prediction from hyper features and earlier slices."""

    def __init__(self, hyper_channels, slice_sizes, rng):
        self._sizes = list(slice_sizes)
        self._predictors = []
        for i, n in enumerate(self._sizes):
            p = SlicePredictor(hyper_channels + sum(self._sizes[:i]), n, rng)
            setattr(self, f"slice{i}", p)
            self._predictors.append(p)

    @property
    def slice_sizes(self):
        return list(self._sizes)

    def split(self, y):
        return T.split(y, self._sizes, axis=-1)

    def predict(self, hyper, prefix, i):
        """``(mu_i, sigma_i)`` from hyper features and exactly the slices before ``i``."""
        if len(prefix) != i:
            raise ValueError(f"slice {i} needs {i} decoded slices, got {len(prefix)}")
        for j, s in enumerate(prefix):
            if s.shape[-1] != self._sizes[j]:
                raise ValueError(f"slice {j} has {s.shape[-1]} channels, expected {self._sizes[j]}")
        ctx = T.concat([hyper] + list(prefix), axis=-1) if prefix else T.as_tensor(hyper)
        return self._predictors[i](ctx)


def charm_predict(charm, hyper, prefix, i):
    return charm.predict(hyper, prefix, i)
