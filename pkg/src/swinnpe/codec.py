"""The end-to-end learned codec: transforms, entropy models and the coding path."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import range_coder as rc
from . import tensor as T
from .entropy import (
    SUPPORT,
    ChannelAutoregressive,
    FactorizedPrior,
    gaussian_bits,
    gaussian_pmf,
    quantize_train,
    round_half_away,
    symbol_index,
)
from .nn import Module
from .transforms import CodecConfig, build_transforms, check_geometry


@dataclass
class LatentBundle:
    y: np.ndarray
    y_hat: np.ndarray
    z: np.ndarray
    z_hat: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    y_slices: list = field(default_factory=list)
    x_hat: np.ndarray | None = None


@dataclass
class Compressed:
    """Coded segments for one image plus what the encoder itself reconstructed."""

    shape: tuple
    z_stream: rc.Bitstream
    y_streams: list
    bundle: LatentBundle
    z_ideal_bits: float = 0.0
    y_ideal_bits: list = field(default_factory=list)

    @property
    def payload_bits(self):
        return self.z_stream.bit_length + sum(s.bit_length for s in self.y_streams)


@dataclass
class TrainOutput:
    x_hat: T.Tensor
    y_bits: T.Tensor
    z_bits: T.Tensor


class SwinNPE(Module):
    """Convolutional-Swin transform codec with a hyperprior and channel-wise context."""

    def __init__(self, cfg=None, rng=None):
        cfg = cfg if cfg is not None else CodecConfig.toy()
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self._cfg = cfg
        self.g_a, self.h_a, self.h_s, self.g_s = build_transforms(cfg, rng)
        self.charm = ChannelAutoregressive(2 * cfg.latent_channels, cfg.slice_sizes(), rng)
        self.z_prior = FactorizedPrior(cfg.hyper_channels, rng=rng)

    @property
    def cfg(self):
        return self._cfg

    # -- training path -----------------------------------------------------
    def forward_train(self, x, rng):
        """Noisy-quantization forward pass on ``[N, H, W, 3]`` images."""
        x = T.as_tensor(x)
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        check_geometry(self.cfg, x.shape[1], x.shape[2])
        y = self.g_a(x)
        z = self.h_a(y)
        z_tilde = quantize_train(z, rng)
        z_bits = self.z_prior.bits(z_tilde)
        hyper = self.h_s(z_tilde)
        noisy, bits = [], []
        for i, y_i in enumerate(self.charm.split(y)):
            mu, sigma = self.charm.predict(hyper, noisy, i)
            y_tilde = quantize_train(y_i, rng)
            bits.append(gaussian_bits(y_tilde, mu, sigma))
            noisy.append(y_tilde)
        x_hat = self.g_s(T.concat(noisy, axis=-1))
        return TrainOutput(x_hat, T.concat(bits, axis=-1), z_bits)

    # -- coding path -------------------------------------------------------
    def analyse(self, x):
        with T.no_grad():
            y = self.g_a(T.as_tensor(x)[None]).data[0]
            z = self.h_a(T.Tensor(y)[None]).data[0]
        return y, z

    def synthesize(self, y_hat):
        with T.no_grad():
            return np.clip(self.g_s(T.Tensor(y_hat)[None]).data[0], 0.0, 1.0)

    def compress(self, x):
        """Entropy-code one ``[H, W, 3]`` image in [0, 1]."""
        x = np.asarray(x, dtype=np.float64)
        H, W = x.shape[:2]
        check_geometry(self.cfg, H, W)
        y, z = self.analyse(x)
        offsets = self.z_prior.medians()
        z_q = round_half_away(z - offsets)
        z_hat = z_q + offsets
        z_cdfs = self.z_prior.quantized_cdfs(offsets=offsets)
        z_stream, z_ideal = _encode_latent(z_q.reshape(-1), np.tile(np.arange(z.shape[-1]), z_q.size // z.shape[-1]), z_cdfs)

        hyper = self._hyper(z_hat)
        prefix, streams, ideal, mus, sigmas = [], [], [], [], []
        for i, y_i in enumerate(np.split(y, np.cumsum(self.charm.slice_sizes)[:-1], axis=-1)):
            mu, sigma = self._predict(hyper, prefix, i)
            q = round_half_away(y_i - mu)
            cdfs = rc.quantize_pmf(gaussian_pmf(sigma))
            stream, bits = _encode_latent(q.reshape(-1), np.arange(q.size), cdfs)
            streams.append(stream)
            ideal.append(bits)
            prefix.append(q + mu)
            mus.append(mu)
            sigmas.append(sigma)
        y_hat = np.concatenate(prefix, axis=-1)
        bundle = LatentBundle(
            y=y,
            y_hat=y_hat,
            z=z,
            z_hat=z_hat,
            mu=np.concatenate(mus, axis=-1),
            sigma=np.concatenate(sigmas, axis=-1),
            y_slices=prefix,
            x_hat=self.synthesize(y_hat),
        )
        return Compressed((H, W), z_stream, streams, bundle, z_ideal, ideal)

    def decompress(self, z_stream, y_streams, shape):
        """Invert :meth:`compress` from the coded segments alone."""
        H, W = shape
        check_geometry(self.cfg, H, W)
        if len(y_streams) != self.cfg.slices:
            raise ValueError(f"expected {self.cfg.slices} latent segments, got {len(y_streams)}")
        C6 = self.cfg.hyper_channels
        zshape = (H // 64, W // 64, C6)
        offsets = self.z_prior.medians()
        z_cdfs = self.z_prior.quantized_cdfs(offsets=offsets)
        n = int(np.prod(zshape))
        z_q = _decode_latent(z_stream, np.tile(np.arange(C6), n // C6), z_cdfs).reshape(zshape)
        z_hat = z_q + offsets
        hyper = self._hyper(z_hat)
        prefix, mus, sigmas = [], [], []
        for i, size in enumerate(self.charm.slice_sizes):
            mu, sigma = self._predict(hyper, prefix, i)
            cdfs = rc.quantize_pmf(gaussian_pmf(sigma))
            q = _decode_latent(y_streams[i], np.arange(mu.size), cdfs).reshape(mu.shape)
            prefix.append(q + mu)
            mus.append(mu)
            sigmas.append(sigma)
        y_hat = np.concatenate(prefix, axis=-1)
        return LatentBundle(
            y=None,
            y_hat=y_hat,
            z=None,
            z_hat=z_hat,
            mu=np.concatenate(mus, axis=-1),
            sigma=np.concatenate(sigmas, axis=-1),
            y_slices=prefix,
            x_hat=self.synthesize(y_hat),
        )

    def estimate_bits(self, x):
        """Model code length (bits) of the rounded latents, ``(R_y, R_z)``."""
        return self._rounded_rates(np.asarray(x, dtype=np.float64))

    def _rounded_rates(self, x):
        y, z = self.analyse(x)
        offsets = self.z_prior.medians()
        z_hat = round_half_away(z - offsets) + offsets
        with T.no_grad():
            r_z = float(self.z_prior.bits(T.Tensor(z_hat)).data.sum())
        hyper = self._hyper(z_hat)
        prefix, r_y = [], 0.0
        for i, y_i in enumerate(np.split(y, np.cumsum(self.charm.slice_sizes)[:-1], axis=-1)):
            mu, sigma = self._predict(hyper, prefix, i)
            y_hat_i = round_half_away(y_i - mu) + mu
            with T.no_grad():
                r_y += float(gaussian_bits(T.Tensor(y_hat_i), T.Tensor(mu), T.Tensor(sigma)).data.sum())
            prefix.append(y_hat_i)
        return r_y, r_z

    def _hyper(self, z_hat):
        with T.no_grad():
            return self.h_s(T.Tensor(z_hat)[None]).data[0]

    def _predict(self, hyper, prefix, i):
        with T.no_grad():
            mu, sigma = self.charm.predict(T.Tensor(hyper), [T.Tensor(p) for p in prefix], i)
        return mu.data, sigma.data


def _encode_latent(q, table_rows, cdfs):
    """Code integer offsets ``q`` (flattened) with ``cdfs[table_rows[k]]``; tails escape to raw 32 bits."""
    idx = symbol_index(q)
    enc = rc.RangeEncoder()
    ideal = 0.0
    lists = [c.tolist() for c in cdfs] if len(cdfs) <= 4096 else None
    escapes = (2 * SUPPORT + 1, 2 * SUPPORT + 2)
    for k in range(len(idx)):
        row = table_rows[k]
        cdf = lists[row] if lists is not None else cdfs[row].tolist()
        s = int(idx[k])
        enc.encode(s, cdf)
        ideal -= np.log2((cdf[s + 1] - cdf[s]) / rc.TOTAL)
        if s in escapes:
            enc.encode_raw(int(q[k]) & 0xFFFFFFFF, 32)
            ideal += 32
    return enc.finish(), ideal


def _decode_latent(stream, table_rows, cdfs):
    dec = rc.RangeDecoder(stream)
    out = np.empty(len(table_rows), dtype=np.float64)
    lists = [c.tolist() for c in cdfs] if len(cdfs) <= 4096 else None
    escapes = (2 * SUPPORT + 1, 2 * SUPPORT + 2)
    for k in range(len(table_rows)):
        row = table_rows[k]
        cdf = lists[row] if lists is not None else cdfs[row].tolist()
        s = dec.decode(cdf)
        if s in escapes:
            raw = dec.decode_raw(32)
            out[k] = raw - (1 << 32) if raw & 0x80000000 else raw
        else:
            out[k] = s - SUPPORT
    return out
