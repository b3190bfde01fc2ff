"""A tour of the tensor engine: forward ops, reverse-mode gradients, and
finite-difference verification.

Run:  python3 demos/01_autodiff.py
"""

import numpy as np

from kvbabel import tensor as T
from kvbabel.tensor import Rng, Tensor

rng = Rng(0)

# build a small computation: y = sum(gelu(x @ w) * x @ w)
x = Tensor(rng.normal((4, 6)), requires_grad=True)
w = Tensor(rng.normal((6, 3)), requires_grad=True)
h = T.matmul(x, w)
y = T.tsum(T.mul(T.gelu(h), h))
print(f"forward value: {y.item():.6f}")

y.backward()
print(f"dL/dx norm: {np.linalg.norm(x.grad):.6f}")
print(f"dL/dw norm: {np.linalg.norm(w.grad):.6f}")

# gradients accumulate until cleared
y2 = T.tsum(T.mul(T.gelu(T.matmul(x, w)), T.matmul(x, w)))
y2.backward()
print(f"after second backward, dL/dx norm doubles: {np.linalg.norm(x.grad):.6f}")
T.zero_grads([x, w])

# every gradient in this library can be cross-checked against central
# finite differences; the translator training path is validated the same way
err = T.grad_check(lambda t: T.tsum(T.mul(T.gelu(T.matmul(t, w)), T.matmul(t, w))), x)
print(f"grad_check max relative error vs finite differences: {err:.2e}")

# the fused cross-entropy is numerically stable even for extreme logits
logits = Tensor(np.array([[[500.0, -500.0, 0.0, 1.0]]]))
loss = T.softmax_cross_entropy(logits, np.array([[0]]), np.array([[True]]))
print(f"stable cross entropy with +-500 logits: {loss.item():.6f}")
