"""Back-propagation chain census: DP vs explicit walk vs recursive oracle."""

import csv
import math

import pytest

from semicoupled.chains import (
    GridSpec,
    enumerate_chains,
    enumerate_chains_explicit,
    expected_surviving,
    export_histograms,
    total_chains,
)
from semicoupled.errors import ConfigError, ParameterError

from oracles import enumerate_chain_lengths_naive


def test_single_cell_grid():
    assert enumerate_chains(GridSpec(1, 1)) == {1: 1}
    assert total_chains(GridSpec(1, 1)) == 1


def test_two_by_two_worked_example():
    # sink (2,2): straight down (2 edges, 1 way) or using the one temporal
    # edge at either level (3 edges, 2 ways)
    assert enumerate_chains(GridSpec(2, 2)) == {2: 1, 3: 2}


def test_depth_one_counts_every_suffix():
    # one chain per reachable input column, lengths 1..T
    assert enumerate_chains(GridSpec(1, 4)) == {1: 1, 2: 1, 3: 1, 4: 1}


def test_dp_matches_explicit_and_naive_everywhere_small():
    for depth in range(1, 9):
        for length in range(1, 9):
            if depth * length > 16:
                continue
            spec = GridSpec(depth, length)
            dp = enumerate_chains(spec)
            assert dp == enumerate_chains_explicit(spec)
            assert dp == enumerate_chain_lengths_naive(depth, length)


def test_total_counts_are_lattice_path_binomials():
    # chains ending at column t choose where to interleave l downs among
    # (length - t) backs: sum over t of C(depth - 1 + length - t, depth - 1)
    for depth, length in ((2, 5), (3, 4), (4, 4), (5, 3)):
        expected = sum(
            math.comb(depth - 1 + length - t, depth - 1) for t in range(1, length + 1)
        )
        assert total_chains(GridSpec(depth, length)) == expected


def test_explicit_walk_refuses_large_grids():
    with pytest.raises(ConfigError):
        enumerate_chains_explicit(GridSpec(10, 10))


def test_grid_validation():
    with pytest.raises(ConfigError):
        GridSpec(0, 5)
    with pytest.raises(ConfigError):
        GridSpec(3, 0)


def test_survival_ratio_exact():
    spec = GridSpec(3, 5)
    base = enumerate_chains(spec)
    for p in (0.0, 0.25, 0.5, 0.9, 1.0):
        surviving = expected_surviving(spec, p)
        assert set(surviving) == set(base)
        for k, count in base.items():
            assert abs(surviving[k] - count * (1.0 - p) ** k) <= 1e-12


def test_survival_monotone_in_p_per_bucket():
    spec = GridSpec(4, 4)
    probs = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9]
    tables = [expected_surviving(spec, p) for p in probs]
    for prev, cur in zip(tables, tables[1:]):
        for k in prev:
            assert cur[k] <= prev[k] + 1e-15


def test_survival_probability_validation():
    with pytest.raises(ParameterError):
        expected_surviving(GridSpec(2, 2), -0.1)
    with pytest.raises(ParameterError):
        expected_surviving(GridSpec(2, 2), 1.1)


def test_export_histograms_layout(tmp_path):
    spec = GridSpec(2, 3)
    paths = export_histograms(spec, [0.0, 0.5], tmp_path)
    assert [p.name for p in paths] == [
        "chains_depth2_len3_p0.csv",
        "chains_depth2_len3_p0.5.csv",
    ]
    base = enumerate_chains(spec)
    for p, path in zip((0.0, 0.5), paths):
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["length", "expected_count"]
        got = {int(k): float(v) for k, v in rows[1:]}
        assert got == {k: c * (1.0 - p) ** k for k, c in base.items()}
