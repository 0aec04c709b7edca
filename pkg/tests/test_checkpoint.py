import numpy as np
import pytest

from natgrad.checkpoint import (CheckpointError, describe_checkpoint,
                                load_checkpoint, load_meta_params,
                                save_checkpoint, save_meta_params)
from natgrad.controllers import LstmMetaParams, controller_init

from conftest import make_mlp


def _arrays():
    rng = np.random.default_rng(0)
    return {
        "w": rng.standard_normal((3, 4)),
        "b": rng.standard_normal(5),
        "scalar": np.float64(2.5),
        ("s", "FcWeight", "Wo"): rng.standard_normal((4, 1)),
    }


def test_roundtrip_bitexact_at_float32(tmp_path):
    p = tmp_path / "c.ckpt"
    arrays = _arrays()
    save_checkpoint(str(p), arrays)
    back = load_checkpoint(str(p))
    assert set(back) == set(arrays)
    for k, a in arrays.items():
        want = np.asarray(a, dtype=np.float32).astype(np.float64)
        assert np.array_equal(back[k], want)
        assert np.shape(back[k]) == np.shape(want)


def test_second_save_is_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    arrays = _arrays()
    save_checkpoint(str(p1), arrays)
    save_checkpoint(str(p2), arrays)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_is_human_readable(tmp_path):
    p = tmp_path / "c.ckpt"
    save_checkpoint(str(p), _arrays())
    head = describe_checkpoint(str(p))
    assert head.startswith("natgrad-checkpoint v1")
    assert "byte-order little-endian" in head
    assert "array w shape 3,4 dtype float32" in head


def test_corruption_detected(tmp_path):
    p = tmp_path / "c.ckpt"
    save_checkpoint(str(p), _arrays())
    raw = bytearray(p.read_bytes())
    raw[-1] ^= 0xFF  # flip one payload byte
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(str(p))


def test_version_mismatch_rejected(tmp_path):
    p = tmp_path / "c.ckpt"
    save_checkpoint(str(p), _arrays())
    raw = p.read_bytes().replace(b"natgrad-checkpoint v1",
                                 b"natgrad-checkpoint v9", 1)
    p.write_bytes(raw)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(str(p))


def test_not_a_checkpoint(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b"hello world\nend-header\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(p))
    p.write_bytes(b"no terminator at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(p))


def test_truncated_payload_rejected(tmp_path):
    p = tmp_path / "c.ckpt"
    save_checkpoint(str(p), _arrays())
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="range"):
        load_checkpoint(str(p))


def test_empty_state(tmp_path):
    p = tmp_path / "empty.ckpt"
    save_checkpoint(str(p), {})
    assert load_checkpoint(str(p)) == {}


def test_meta_params_roundtrip(tmp_path):
    _, params = make_mlp((2, 4, 3), seed=0)
    meta, _ = controller_init(params, seed=3)
    p = tmp_path / "meta.ckpt"
    save_meta_params(str(p), meta)
    again = load_meta_params(str(p), LstmMetaParams)
    assert set(again.arrays) == set(meta.arrays)
    for k, a in meta.arrays.items():
        want = a.astype(np.float32).astype(np.float64)
        assert np.array_equal(again.arrays[k], want)


def test_meta_params_extra_arrays_are_separated(tmp_path):
    _, params = make_mlp((2, 4, 3), seed=0)
    meta, _ = controller_init(params, seed=3)
    p = tmp_path / "meta.ckpt"
    save_meta_params(str(p), meta, extra={"step": np.float64(17.0)})
    again = load_meta_params(str(p), LstmMetaParams)
    assert set(again.arrays) == set(meta.arrays)
    raw = load_checkpoint(str(p))
    assert raw["step"] == 17.0
