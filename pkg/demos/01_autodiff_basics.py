"""Tour of the tensor kernel: building blocks, gradients, verification.

Run:  python demos/01_autodiff_basics.py
"""
import numpy as np

import dsat.tensor as T
from dsat.gradcheck import grad_check
from dsat.tensor import Parameter, Tensor

rng = np.random.default_rng(0)

# --- tensors track gradients through composed primitives -------------------
x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
out = T.sigmoid(T.matmul(x, w))
loss = T.mean(T.mul(out, out))
loss.backward()
print("loss:", float(loss.data))
print("dloss/dx norm:", np.linalg.norm(x.grad))
print("dloss/dw norm:", np.linalg.norm(w.grad))

# --- convolution and pooling behave like their loop definitions ------------
img = Tensor(rng.normal(size=(1, 1, 8, 8)), requires_grad=True)
kernel = Tensor(rng.normal(size=(4, 1, 3, 3)), requires_grad=True)
feat = T.maxpool2d(T.relu(T.conv2d(img, kernel, padding=1)), 2)
print("\nconv -> relu -> pool:", img.shape, "->", feat.shape)

# --- the verifier compares reverse mode against central differences --------
p = Parameter((6,), init="zeros")
p.data[...] = rng.normal(size=6)
target = rng.normal(size=6)


def objective():
    diff = T.sub(p, Tensor(target))
    return T.sum_(T.mul(diff, diff))


report = grad_check(objective, [("p", p)], eps=1e-4, tol=1e-6)
print("\ngradient check on a quadratic:")
print(report.summary())
