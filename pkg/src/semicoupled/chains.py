"""Counting back-propagation chains through a depth x length grid.

The unrolled recurrent stack is modelled as a grid of nodes (l, t) with
l in [1, depth] and t in [1, length].  The gradient at the sink (depth,
length) reaches the inputs along two edge kinds:

* spatial: (l, t) -> (l - 1, t), one step down the stack;
* temporal: (l, t) -> (l, t - 1), one step back in time (absent at t = 1,
  where the previous cell state is the zero constant).

A chain is a path from the sink to any input node (0, t); its length is its
edge count.  :func:`enumerate_chains` counts chains per length with a
dynamic program; :func:`enumerate_chains_explicit` walks every path and is
the cross-check oracle for small grids.  When each edge survives
independently with probability 1 - p, a length-k chain survives with
probability (1 - p) ** k.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ParameterError


@dataclass(frozen=True)
class GridSpec:
    """Stack depth and unrolled sequence length; both at least 1."""

    depth: int
    length: int

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.length < 1:
            raise ConfigError(f"length must be >= 1, got {self.length}")


def _shift(counts: dict[int, int]) -> dict[int, int]:
    return {k + 1: v for k, v in counts.items()}


def _merge(a: dict[int, int], b: dict[int, int]) -> dict[int, int]:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + v
    return out


def enumerate_chains(spec: GridSpec) -> dict[int, int]:
    """Chain counts keyed by length, via the grid recursion.

    f(0, t) is the trivial zero-length endpoint; otherwise
    f(l, t) = shift(f(l - 1, t)) + shift(f(l, t - 1) if t > 1).
    """
    table: list[list[dict[int, int]]] = [
        [{} for _ in range(spec.length + 1)] for _ in range(spec.depth + 1)
    ]
    for t in range(1, spec.length + 1):
        table[0][t] = {0: 1}
    for l in range(1, spec.depth + 1):
        for t in range(1, spec.length + 1):
            counts = _shift(table[l - 1][t])
            if t > 1:
                counts = _merge(counts, _shift(table[l][t - 1]))
            table[l][t] = counts
    return dict(sorted(table[spec.depth][spec.length].items()))


def enumerate_chains_explicit(spec: GridSpec, cell_limit: int = 36) -> dict[int, int]:
    """Brute-force path walk; limited to small grids by design."""
    if spec.depth * spec.length > cell_limit:
        raise ConfigError(
            f"explicit enumeration over {spec.depth}x{spec.length} exceeds {cell_limit} cells"
        )
    counts: dict[int, int] = {}
    stack = [(spec.depth, spec.length, 0)]
    while stack:
        l, t, edges = stack.pop()
        if l == 0:
            counts[edges] = counts.get(edges, 0) + 1
            continue
        stack.append((l - 1, t, edges + 1))
        if t > 1:
            stack.append((l, t - 1, edges + 1))
    return dict(sorted(counts.items()))


def expected_surviving(spec: GridSpec, p: float) -> dict[int, float]:
    """Expected surviving chains per length when edges drop with probability p."""
    if not (0.0 <= p <= 1.0):
        raise ParameterError(f"drop probability must lie in [0, 1], got {p}")
    return {k: c * (1.0 - p) ** k for k, c in enumerate_chains(spec).items()}


def total_chains(spec: GridSpec) -> int:
    return sum(enumerate_chains(spec).values())


def export_histograms(spec: GridSpec, probabilities: list[float], out_dir) -> list[Path]:
    """One CSV per probability: rows of (length, expected_count)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for p in probabilities:
        surviving = expected_surviving(spec, p)
        path = out / f"chains_depth{spec.depth}_len{spec.length}_p{p:g}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["length", "expected_count"])
            for k in sorted(surviving):
                writer.writerow([k, repr(surviving[k])])
        paths.append(path)
    return paths
