"""
Windows, shifts and attention without positional encodings
==========================================================

The convolutional Swin block forms Q, K and V with depthwise-separable
convolutions over the whole map, so it needs no relative-position table.
"""

import numpy as np

from swinnpe import tensor as T
from swinnpe.swin import AttentionConfig, BaselineSwinBlock, ConvSwinBlock, shift_mask, window_partition
from swinnpe.tensor import Tensor

rng = np.random.default_rng(1)

# an 8x8 map splits into four 4x4 windows of 16 tokens each
x = np.arange(64.0).reshape(8, 8, 1)
print("windows:", window_partition(x, 4).shape)
print("first window tokens:", window_partition(x, 4).data[0, :, 0].astype(int))

# after a cyclic shift by 2, tokens from different regions must not attend to each other
mask = shift_mask(8, 8, 4, 2)
print("masked pairs per window:", [int((m < 0).sum()) for m in mask])

# same width, two flavours of block
cfg = dict(channels=32, window=4)
conv = ConvSwinBlock(AttentionConfig(**cfg), rng)
base = BaselineSwinBlock(AttentionConfig(projection="linear-rpe", **cfg), rng)
print("conv block params:", conv.num_parameters())
print("baseline block params:", base.num_parameters(), "(incl.", base.rpe_table.size, "bias-table entries)")

# shifting the input by a whole window shifts the output the same way
block = ConvSwinBlock(AttentionConfig(channels=16, window=4, padding="circular"), rng)
inp = rng.standard_normal((1, 16, 16, 16))
with T.no_grad():
    shifted_out = block(Tensor(np.roll(inp, 4, axis=1))).data
    out_shifted = np.roll(block(Tensor(inp)).data, 4, axis=1)
print("equivariance error:", np.abs(shifted_out - out_shifted).max())
