"""
From Gaussian scales to bytes
=============================

A latent value is coded as its integer offset from the predicted mean under a
discretized Gaussian.  The range coder gets within a few bits of the ideal.
"""

import numpy as np

from swinnpe import range_coder as rc
from swinnpe.entropy import gaussian_bits_np, gaussian_pmf, symbol_index

rng = np.random.default_rng(2)

sigma = rng.uniform(0.3, 4.0, size=2000)
offsets = np.round(rng.normal(0.0, sigma))

# one cdf table per element, quantized to 16 bits with every symbol codable
cdfs = rc.quantize_pmf(gaussian_pmf(sigma))
symbols = symbol_index(offsets)
stream = rc.encode(symbols, cdfs)

model_bits = gaussian_bits_np(offsets, 0.0, sigma).sum()
print(f"model estimate   {model_bits:9.1f} bits")
print(f"quantized ideal  {rc.ideal_bits(symbols, cdfs):9.1f} bits")
print(f"actual stream    {stream.bit_length:9d} bits")

decoded = rc.decode(stream, cdfs)
print("roundtrip exact:", decoded == symbols.tolist())

# a lopsided source costs almost nothing
cdf = [0, 65535, 65536]
print("100 near-certain symbols:", rc.encode([0] * 100, [cdf] * 100).bit_length, "bits (40 are flush)")
