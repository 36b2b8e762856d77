"""
Counting gradient chains through the unrolled grid
==================================================

Unrolling a depth-n stack over T steps gives a grid where gradients travel
down (spatial hop) or back in time (temporal hop).  Counting the distinct
sink-to-input paths per length shows how quickly long chains proliferate,
and what fraction survives when each hop is gated independently.
"""

from semicoupled.chains import (
    GridSpec,
    enumerate_chains,
    enumerate_chains_explicit,
    expected_surviving,
    total_chains,
)

spec = GridSpec(depth=4, length=6)
histogram = enumerate_chains(spec)
print(f"depth {spec.depth} x length {spec.length}:")
for length, count in histogram.items():
    print(f"  {count:5d} chains of length {length}")
print("total:", total_chains(spec))

# The dynamic program agrees with walking every path explicitly.
small = GridSpec(depth=2, length=2)
print("\n2x2 grid:", enumerate_chains(small),
      "explicit walk:", enumerate_chains_explicit(small))

# Independent per-hop survival multiplies in: a length-k chain survives a
# drop probability p with chance (1-p)^k, so long chains die first.
print("\nexpected surviving chains:")
print(f"{'length':>7} {'p=0':>9} {'p=0.25':>9} {'p=0.5':>9} {'p=0.9':>9}")
tables = {p: expected_surviving(spec, p) for p in (0.0, 0.25, 0.5, 0.9)}
for length in histogram:
    row = [tables[p][length] for p in (0.0, 0.25, 0.5, 0.9)]
    print(f"{length:>7} " + " ".join(f"{v:9.3f}" for v in row))
