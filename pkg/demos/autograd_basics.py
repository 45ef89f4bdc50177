"""
Reverse-mode autodiff with solarcast.autograd
=============================================

A short tour of the Tensor type that every layer of the forecaster is
built on: operator sugar, the backward pass, precision control and the
finite-difference checker used throughout the test-suite.
"""

import numpy as np

from solarcast.autograd import Tensor, finite_difference_check, no_grad, precision
from solarcast import autograd as ag

# a leaf tensor that wants gradients; float32 is the default precision
w = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
x = Tensor(np.array([[2.0], [1.0]]))
print(w.dtype)  # float32

# build a tiny graph: y = sum(tanh(w @ x) ** 2)
y = (ag.tanh(w @ x) ** 2).sum()
y.backward()
print("y     =", y.item())
print("dy/dw =", w.grad)

# the same gradient by hand: d/dw sum(tanh(z)^2) = 2 tanh(z) (1 - tanh(z)^2) x^T
z = w.data @ x.data
print("check =", 2 * np.tanh(z) * (1 - np.tanh(z) ** 2) @ x.data.T)

# under no_grad nothing is recorded, so results cannot be differentiated
with no_grad():
    frozen = w @ x
print(frozen.requires_grad)  # False

# gradient checks want float64; precision() switches the default for a block
with precision("float64"):
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

    def objective():
        return ag.layer_norm(ag.relu(a @ b), Tensor(np.ones(2)), Tensor(np.zeros(2))).sum() \
            + ag.softmax(a).sum()

    print("max relative error:", finite_difference_check(objective, [a, b]))

# causal convolution: the output at step t only sees steps <= t
with precision("float64"):
    signal = Tensor(np.zeros((1, 8, 1)))
    signal.data[0, 4, 0] = 1.0  # an impulse at step 4
    kernel = Tensor(np.ones((3, 1, 1)))  # taps, c_in, c_out
    print(ag.conv1d_causal(signal, kernel).data[0, :, 0])  # zeros until step 4
