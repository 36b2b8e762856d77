"""Binary container and PGM round trips."""

import json
import struct

import numpy as np
import pytest

from semicoupled.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from semicoupled.errors import ContractError, DimensionError
from semicoupled.pgm import read_pgm, write_pgm

RNG = np.random.default_rng(88)


def test_checkpoint_roundtrip_exact(tmp_path):
    arrays = {
        "layer0.spatial_kernel": RNG.normal(size=(4, 2, 3, 3)),
        "layer0.spatial_bias": RNG.normal(size=4),
        "scalar": np.asarray(3.5),
    }
    meta = {"step": 42, "schedule": {"q": 0.75}, "names": ["a", "b"]}
    path = tmp_path / "ck.bin"
    save_checkpoint(path, arrays, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == set(arrays)
    for name, arr in arrays.items():
        assert loaded[name].shape == np.asarray(arr).shape
        assert np.array_equal(loaded[name], arr)


def test_checkpoint_bytes_are_insertion_order_independent(tmp_path):
    a = {"x": np.arange(4.0), "y": np.ones((2, 2)), "z": np.asarray(1.0)}
    b = {"z": np.asarray(1.0), "y": np.ones((2, 2)), "x": np.arange(4.0)}
    pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(pa, a, {"k": 1})
    save_checkpoint(pb, b, {"k": 1})
    assert pa.read_bytes() == pb.read_bytes()


def test_checkpoint_header_layout(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(path, {"w": np.zeros(3)}, {"tag": "t"})
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    (
        header_len,
    ) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + header_len])
    assert header["meta"] == {"tag": "t"}
    assert header["arrays"]["w"] == {"shape": [3], "offset": 0}
    assert len(raw) == 16 + header_len + 3 * 8


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(ContractError):
        load_checkpoint(path)


def test_checkpoint_empty_meta_defaults(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(path, {"w": np.ones(1)})
    _, meta = load_checkpoint(path)
    assert meta == {}


def test_pgm_roundtrip_quantised(tmp_path):
    field = RNG.random((5, 7))
    path = tmp_path / "f.pgm"
    write_pgm(path, field)
    back = read_pgm(path)
    assert back.shape == (5, 7)
    assert np.max(np.abs(back - field)) <= 0.5 / 255 + 1e-12


def test_pgm_exact_at_levels(tmp_path):
    field = np.array([[0.0, 1.0], [128 / 255, 64 / 255]])
    path = tmp_path / "g.pgm"
    write_pgm(path, field)
    assert np.array_equal(read_pgm(path), field)
    text = path.read_text()
    assert text.startswith("P2\n2 2\n255\n")


def test_pgm_clips_out_of_range(tmp_path):
    path = tmp_path / "h.pgm"
    write_pgm(path, np.array([[-0.5, 1.5]]))
    assert np.array_equal(read_pgm(path), [[0.0, 1.0]])


def test_pgm_validation(tmp_path):
    with pytest.raises(DimensionError):
        write_pgm(tmp_path / "bad.pgm", np.zeros((2, 2, 2)))
    p = tmp_path / "text.pgm"
    p.write_text("P5\n2 2\n255\n")
    with pytest.raises(DimensionError):
        read_pgm(p)
    q = tmp_path / "short.pgm"
    q.write_text("P2\n2 2\n255\n1 2 3\n")
    with pytest.raises(DimensionError):
        read_pgm(q)


def test_pgm_ignores_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_text("P2\n# a comment\n2 1\n255\n0 255\n")
    assert np.array_equal(read_pgm(p), [[0.0, 1.0]])
