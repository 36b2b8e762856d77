"""
Long sequences as overlapping chunks
====================================

A length-L sequence is cut into equal chunks that advance by less than
their length, so neighbours always share frames.  Chunks are processed
with independent zero-initialised states; a mean-squared penalty on the
shared frames couples them during training, and stitching averages the
shared frames at inference time.
"""

import numpy as np

from semicoupled.autodiff import Tensor
from semicoupled.ltsc import overlap_loss, partition, stitch

part = partition(source_len=22, chunk_len=8, eta=0.25)
print("spans:", part.chunks)
print("overlap frames between neighbours:", part.overlap_len)

# The final chunk is anchored to the end of the sequence, so coverage is
# exact even when the stride does not divide the length.
covered = sorted({i for s, e in part.chunks for i in range(s, e)})
print("every index covered:", covered == list(range(22)))

# Fabricate per-chunk outputs that disagree a little on shared frames.
rng = np.random.default_rng(0)
outputs = []
for s, e in part.chunks:
    outputs.append([Tensor(np.full((2, 2), t + 0.1 * rng.standard_normal()))
                    for t in range(s, e)])

penalty = overlap_loss(outputs, part)
print("overlap penalty on noisy outputs: %.5f" % float(penalty.data))

agreed = [[Tensor(np.full((2, 2), float(t))) for t in range(s, e)]
          for s, e in part.chunks]
print("overlap penalty when chunks agree:", float(overlap_loss(agreed, part).data))

# Stitching merges everything back to one sequence of length 22.
merged = stitch(outputs, part)
print("stitched length:", len(merged))
print("frame 13 is the mean of two chunks' views: %.4f" % merged[13][0, 0])
