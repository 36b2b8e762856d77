"""
Reverse-mode differentiation on dense arrays
============================================

Build a small expression graph, pull gradients back through it, and
cross-check one of them against central finite differences.
"""

import numpy as np

from semicoupled.autodiff import Tensor, backward, ops

# Leaves that want gradients are ordinary float64 arrays wrapped in Tensor.
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)

# Operations record themselves while they execute; the result is eager.
hidden = ops.sigmoid(ops.linear(x, w, b))
loss = ops.mean_all(ops.mul(hidden, hidden))
print("loss:", float(loss.data))

# backward() walks the recorded graph once per node and returns gradients
# keyed by the leaf tensors you ask about.
grads = backward(loss, params=[x, w, b], accumulate=False)
print("dL/dw:\n", grads[w])

# The same loss evaluated twice with a nudged entry gives the numeric
# derivative; the analytic one should sit within ~1e-8 of it.
eps = 1e-6
w.data[0, 0] += eps
up = float(ops.mean_all(ops.mul(ops.sigmoid(ops.linear(x, w, b)),
                                ops.sigmoid(ops.linear(x, w, b)))).data)
w.data[0, 0] -= 2 * eps
down = float(ops.mean_all(ops.mul(ops.sigmoid(ops.linear(x, w, b)),
                                  ops.sigmoid(ops.linear(x, w, b)))).data)
w.data[0, 0] += eps
numeric = (up - down) / (2 * eps)
print("analytic %.10f vs numeric %.10f" % (grads[w][0, 0], numeric))

# Fan-out accumulates: using a tensor twice doubles its gradient.
y = Tensor(np.array([3.0]), requires_grad=True)
twice = ops.add(y, y)
print("d(y+y)/dy =", backward(ops.sum_all(twice), params=[y], accumulate=False)[y])

# Evaluation-only code can opt out of graph recording entirely.
with ops.no_grad():
    silent = ops.mul(x, x)
print("recorded a node under no_grad?", silent.node is not None)
