"""
Stochastic gradient gates
=========================

A gate is an identity in the forward pass.  In the backward pass it
multiplies the gradient flowing through it by a Bernoulli draw: with
probability p the gradient is dropped, otherwise it passes unscaled.
Averaged over draws the estimator is (1 - p) times the exact gradient.
"""

import numpy as np

from semicoupled.autodiff import GateDescriptor, Tensor, backward, ops

p = 0.3
x = Tensor(np.ones(5), requires_grad=True)
weights = Tensor(np.arange(1.0, 6.0))
gate = GateDescriptor(p, np.random.SeedSequence(42), branch_tag="demo")

# One forward graph, many backward passes: each backward call re-draws the
# gate, which is how the Monte Carlo average below gets its samples.
loss = ops.sum_all(ops.mul(ops.stochastic_gate(x, gate), weights))
print("forward is identity:", float(loss.data) == float(np.sum(weights.data)))

n = 20_000
total = np.zeros(5)
for _ in range(n):
    total += backward(loss, params=[x], accumulate=False)[x]
mean = total / n

exact = weights.data
print("exact gradient:     ", exact)
print("MC mean of gated:   ", np.round(mean, 3))
print("(1 - p) * exact:    ", (1 - p) * exact)

# The endpoints take a short cut: p = 0 passes bitwise and p = 1 blocks
# bitwise, and neither consumes a random draw, so annealing a schedule all
# the way down to zero leaves the run bitwise identical to an ungated one.
for endpoint in (0.0, 1.0):
    g = GateDescriptor(endpoint, np.random.SeedSequence(7))
    state_before = g.get_state()
    got = backward(ops.sum_all(ops.stochastic_gate(x, g)), params=[x],
                   accumulate=False)[x]
    print(f"p={endpoint}: gradient {got}, stream untouched: {g.get_state() == state_before}")
