"""Rate-distortion training at desk scale."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import tensor as T
from .codec import SwinNPE
from .transforms import check_geometry

logger = logging.getLogger(__name__)

BETAS = (0.003, 0.001, 0.0003, 0.0001)


@dataclass
class TrainConfig:
    beta: float
    steps: int = 2000
    batch_size: int = 2
    crop: int = 64
    lr: float = 1e-4
    final_lr_scale: float = 0.1
    final_fraction: float = 0.1
    clip_norm: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")

    def lr_at(self, step):
        """Learning rate for 0-based ``step``: constant, then scaled for the final stretch."""
        if step >= self.steps * (1.0 - self.final_fraction):
            return self.lr * self.final_lr_scale
        return self.lr


@dataclass
class LossBreakdown:
    D: T.Tensor
    R: T.Tensor
    L: T.Tensor
    beta: float

    def values(self):
        return float(self.D.data), float(self.R.data), float(self.L.data)


def rd_loss(x, model, beta, rng):
    """``L = D + beta * R`` with ``D`` the RGB MSE and ``R`` in bits per pixel."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    N, H, W, _ = x.shape
    out = model.forward_train(x, rng)
    D = T.mean(T.square(out.x_hat - x))
    R = (T.tsum(out.y_bits) + T.tsum(out.z_bits)) * (1.0 / (N * H * W))
    L = D + R * beta if beta else D
    if not np.isfinite(L.data):
        raise FloatingPointError(f"non-finite loss: D={D.data} R={R.data}")
    return LossBreakdown(D, R, L, beta)


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm):
    total = np.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


def synthetic_dataset(n, size, seed):
    """Reproducible RGB images in [0, 1]: smooth gradients, rectangles, band-limited noise."""
    rng = np.random.default_rng(seed)
    H, W = (size, size) if np.isscalar(size) else size
    yy, xx = np.meshgrid(np.linspace(0, 1, H), np.linspace(0, 1, W), indexing="ij")
    images = []
    for _ in range(n):
        img = np.empty((H, W, 3))
        for c in range(3):
            a, b, d = rng.uniform(-0.5, 0.5, 3)
            img[..., c] = 0.5 + a * xx + b * yy + d * xx * yy
        for _ in range(rng.integers(2, 7)):
            h, w = rng.integers(H // 8, H // 2 + 1), rng.integers(W // 8, W // 2 + 1)
            top, left = rng.integers(0, H - h + 1), rng.integers(0, W - w + 1)
            img[top : top + h, left : left + w] = rng.uniform(0, 1, 3)
        noise = ndimage.gaussian_filter(rng.standard_normal((H, W, 3)), sigma=(2.0, 2.0, 0))
        img += 0.15 * noise / (noise.std() + 1e-12)
        images.append(np.clip(img, 0.0, 1.0))
    return images


def random_batch(images, batch_size, crop, rng):
    batch = []
    for _ in range(batch_size):
        img = images[rng.integers(len(images))]
        H, W = img.shape[:2]
        if H < crop or W < crop:
            raise ValueError(f"image {H}x{W} is smaller than crop {crop}")
        top, left = rng.integers(0, H - crop + 1), rng.integers(0, W - crop + 1)
        batch.append(img[top : top + crop, left : left + crop])
    return np.stack(batch)


def train_loop(images, config, model=None, model_cfg=None, out_dir=None, metrics_path=None):
    """Optimize ``L = D + beta R``; returns ``(model, history)``.

    ``history`` holds ``(step, D, R_bpp, L)`` rows, one per step (1-based).
    When ``out_dir`` is given the final (and periodic) checkpoint is written
    there as ``model.snpw``/``model.cfg`` with the metrics in ``metrics.csv``.
    """
    from .io import save_model

    if not images:
        raise ValueError("training dataset is empty")
    if model is None:
        model = SwinNPE(model_cfg)
    check_geometry(model.cfg, config.crop, config.crop)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    history = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = metrics_path or os.path.join(out_dir, "metrics.csv")
    fh = open(metrics_path, "w", newline="") if metrics_path else None
    writer = csv.writer(fh) if fh else None
    if writer:
        writer.writerow(["step", "D", "R_bpp", "L"])
    try:
        for step in range(config.steps):
            x = random_batch(images, config.batch_size, config.crop, rng)
            model.zero_grad()
            loss = rd_loss(x, model, config.beta, rng)
            loss.L.backward()
            clip_grad_norm(params, config.clip_norm)
            opt.step(config.lr_at(step))
            row = (step + 1,) + loss.values()
            history.append(row)
            if writer:
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])
            if (step + 1) % 100 == 0:
                logger.info("step %d D=%.5f R=%.4f L=%.5f", *row)
            if out_dir and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                save_model(model, os.path.join(out_dir, "model.snpw"), _meta(config))
    finally:
        if fh:
            fh.close()
    if out_dir:
        save_model(model, os.path.join(out_dir, "model.snpw"), _meta(config))
    return model, history


def _meta(config):
    return {"beta": repr(config.beta), "train_seed": str(config.seed), "train_steps": str(config.steps)}


def moving_average(values, window=100):
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()])
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window


def evaluate(model, images):
    """Actual-bitstream ``(bpp, psnr)`` per image."""
    from .metrics import psnr

    points = []
    for img in images:
        comp = model.compress(img)
        H, W = img.shape[:2]
        points.append((comp.payload_bits / (H * W), psnr(img, comp.bundle.x_hat)))
    return points
