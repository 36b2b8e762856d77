"""Long-sequence decomposition into overlapping equal-length chunks.

A sequence of length L is split into chunks of ``chunk_len`` frames whose
starts advance by ``chunk_len - overlap_len`` with
``overlap_len = max(1, floor(eta * chunk_len))``.  When the last regular
chunk falls short of the end, a final chunk is anchored at
``L - chunk_len`` so that every index is covered and adjacent chunks always
share at least one index.

Chunks are processed with independent zero-initialised cell states; within a
training step they are coupled through :func:`overlap_loss`, a mean squared
penalty on the difference of adjacent chunks' outputs over the indices both
cover.  :func:`stitch` is the inference-time counterpart: non-overlapped
indices are copied, overlapped ones are averaged over all covering chunks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import Tensor
from .autodiff import ops
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class Partition:
    """Sorted [start, end) chunk spans covering [0, source_len)."""

    chunks: tuple[tuple[int, int], ...]
    overlap_len: int
    source_len: int
    chunk_len: int

    def to_json(self) -> str:
        return json.dumps([[s, e] for s, e in self.chunks])

    @classmethod
    def from_json(cls, text: str, overlap_len: int = 1, chunk_len: int | None = None) -> "Partition":
        spans = tuple((int(s), int(e)) for s, e in json.loads(text))
        source_len = max(e for _, e in spans)
        length = chunk_len if chunk_len is not None else spans[0][1] - spans[0][0]
        return cls(chunks=spans, overlap_len=overlap_len, source_len=source_len, chunk_len=length)


def partition(source_len: int, chunk_len: int, eta: float = 0.25) -> Partition:
    """Split [0, source_len) into overlapping chunks of chunk_len frames.

    ``eta`` is the overlap fraction and must lie in (0, 1).  A chunk length
    exceeding the source yields a single full-sequence chunk (degenerate but
    legal).
    """
    if source_len < 1:
        raise ConfigError(f"source_len must be >= 1, got {source_len}")
    if chunk_len < 1:
        raise ConfigError(f"chunk_len must be >= 1, got {chunk_len}")
    if not (0.0 < eta < 1.0):
        raise ConfigError(f"eta must lie in (0, 1), got {eta}")

    overlap_len = max(1, math.floor(eta * chunk_len))
    if chunk_len >= source_len:
        return Partition(
            chunks=((0, source_len),),
            overlap_len=overlap_len,
            source_len=source_len,
            chunk_len=min(chunk_len, source_len),
        )

    stride = chunk_len - overlap_len
    if stride < 1:
        raise ConfigError(
            f"chunk_len {chunk_len} with eta {eta} leaves no forward stride"
        )
    starts = list(range(0, source_len - chunk_len + 1, stride))
    if starts[-1] + chunk_len < source_len:
        starts.append(source_len - chunk_len)
    chunks = tuple((s, s + chunk_len) for s in starts)
    return Partition(chunks=chunks, overlap_len=overlap_len, source_len=source_len, chunk_len=chunk_len)


def chunk_ranges(part: Partition) -> list[range]:
    return [range(s, e) for s, e in part.chunks]


def _check_outputs(chunk_outputs, part: Partition) -> None:
    if len(chunk_outputs) != len(part.chunks):
        raise ContractError(
            f"need outputs for {len(part.chunks)} chunks, got {len(chunk_outputs)}"
        )
    for (s, e), frames in zip(part.chunks, chunk_outputs):
        if len(frames) != e - s:
            raise ContractError(
                f"chunk [{s}, {e}) expects {e - s} output frames, got {len(frames)}"
            )


def overlap_loss(chunk_outputs: list[list[Tensor]], part: Partition) -> Tensor:
    """Sum over adjacent chunk pairs of the MSE on their shared indices.

    ``chunk_outputs[i][j]`` is the output tensor for source index
    ``chunks[i].start + j``.  The penalty is differentiable into both chunks
    of every pair.  With a single chunk the loss is the zero scalar.
    """
    _check_outputs(chunk_outputs, part)
    pair_terms: list[Tensor] = []
    for i in range(1, len(part.chunks)):
        s_prev, e_prev = part.chunks[i - 1]
        s_cur, e_cur = part.chunks[i]
        lo, hi = max(s_prev, s_cur), min(e_prev, e_cur)
        if lo >= hi:
            raise ContractError(
                f"adjacent chunks [{s_prev},{e_prev}) and [{s_cur},{e_cur}) share no index"
            )
        frame_terms = [
            ops.mse(chunk_outputs[i - 1][t - s_prev], chunk_outputs[i][t - s_cur])
            for t in range(lo, hi)
        ]
        pair_terms.append(ops.time_average(frame_terms))
    if not pair_terms:
        return ops.as_tensor(np.asarray(0.0))
    return ops.add_n(pair_terms)


def stitch(chunk_outputs, part: Partition) -> list[np.ndarray]:
    """Merge chunk outputs into one full-length sequence.

    Overlapped indices are the arithmetic mean of every covering chunk's
    output.  Accepts tensors or plain arrays; returns plain arrays.
    """
    _check_outputs(chunk_outputs, part)
    sums: list[np.ndarray | None] = [None] * part.source_len
    counts = np.zeros(part.source_len, dtype=np.int64)
    for (s, e), frames in zip(part.chunks, chunk_outputs):
        for j, frame in enumerate(frames):
            data = frame.data if isinstance(frame, Tensor) else np.asarray(frame, dtype=np.float64)
            idx = s + j
            sums[idx] = data.copy() if sums[idx] is None else sums[idx] + data
            counts[idx] += 1
    if any(c == 0 for c in counts):
        missing = [i for i, c in enumerate(counts) if c == 0]
        raise ContractError(f"partition leaves indices uncovered: {missing[:8]}")
    return [total / n for total, n in zip(sums, counts)]
