"""
Reverse-mode autograd on numpy arrays
=====================================

Build a small graph, backpropagate, and compare against central differences.
"""

import numpy as np

from swinnpe import tensor as T
from swinnpe.tensor import Tensor

rng = np.random.default_rng(0)

# leaves that ask for gradients accumulate them in ``.grad``
x = Tensor(rng.standard_normal((4, 4, 3)), requires_grad=True)
kernel = Tensor(rng.standard_normal((3, 3, 3, 5)) * 0.3, requires_grad=True)

# a convolution, a nonlinearity and a reduction
y = T.conv2d(x, kernel)
loss = T.mean(T.square(T.gelu(y)))
loss.backward()
print("loss", float(loss.data))
print("d loss / d kernel has shape", kernel.grad.shape)

# central differences for one kernel entry
def value():
    with T.no_grad():
        return float(T.mean(T.square(T.gelu(T.conv2d(Tensor(x.data), Tensor(kernel.data))))).data)

idx = (1, 2, 0, 3)
h = 1e-6
kernel.data[idx] += h
up = value()
kernel.data[idx] -= 2 * h
down = value()
kernel.data[idx] += h
print("analytic", kernel.grad[idx], "numeric", (up - down) / (2 * h))

# circular padding makes convolution commute with cyclic shifts
k = rng.standard_normal((3, 3, 3, 2))
a = T.conv2d(np.roll(x.data, 1, axis=0), k, padding="circular").data
b = np.roll(T.conv2d(x.data, k, padding="circular").data, 1, axis=0)
print("shift-commutation error", np.abs(a - b).max())
