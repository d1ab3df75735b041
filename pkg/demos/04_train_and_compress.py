"""
Train a toy codec and compress an image
=======================================

Usage: ``python demos/04_train_and_compress.py [steps] [beta]``

Short runs first learn the mean colour of each image and only then start
spending bits on structure, so a flat colour guess is the baseline to beat.
The learning rate is raised to 1e-3 because the desk-scale budget is tiny.
"""

import sys

import numpy as np

from swinnpe.io import write_ppm
from swinnpe.metrics import psnr
from swinnpe.training import TrainConfig, synthetic_dataset, train_loop
from swinnpe.transforms import CodecConfig

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
beta = float(sys.argv[2]) if len(sys.argv) > 2 else 0.001

train = synthetic_dataset(32, 96, seed=1)
model, history = train_loop(train, TrainConfig(beta=beta, steps=steps, lr=1e-3, seed=0), model_cfg=CodecConfig.toy())
for step, D, R, L in history[:: max(1, steps // 6)]:
    print(f"step {step:5d}  D {D:.4f}  R {R:.3f} bpp  L {L:.4f}")

img = synthetic_dataset(1, 64, seed=99)[0]
comp = model.compress(img)
rec = model.decompress(comp.z_stream, comp.y_streams, comp.shape)
print("decoder matches encoder:", rec.x_hat.tobytes() == comp.bundle.x_hat.tobytes())
print(f"{comp.payload_bits} bits = {comp.payload_bits / 4096:.3f} bpp, PSNR {psnr(img, rec.x_hat):.2f} dB")
print(f"flat-colour PSNR for comparison: {psnr(img, np.broadcast_to(img.mean((0, 1)), img.shape)):.2f} dB")

write_ppm("demo_input.ppm", img)
write_ppm("demo_decoded.ppm", rec.x_hat)
