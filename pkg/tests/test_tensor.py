from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from pptk import MAGIC, TensorFormatError, decode_tensor, encode_tensor, load_tensor, save_tensor


def test_layout():
    data = encode_tensor(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    assert data[:4] == MAGIC
    assert data[4:8] == (2).to_bytes(4, "little")
    assert data[8:16] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert data[16:] == np.array([1.0, 2.0, 3.0], dtype="<f4").tobytes()


def test_file_round_trip(tmp_path: Path, rng: np.random.Generator):
    array = rng.standard_normal((1, 24, 8, 8)).astype(np.float32)
    path = tmp_path / "head.pptk"
    save_tensor(path, array)
    loaded = load_tensor(path)
    assert loaded.dtype == np.float32
    assert np.array_equal(loaded, array)


def test_float64_input_is_stored_as_float32():
    assert decode_tensor(encode_tensor(np.array([0.1]))).tolist() == [np.float32(0.1)]


def test_bad_magic():
    with pytest.raises(TensorFormatError) as info:
        decode_tensor(b"NOPE" + bytes(8))
    assert info.value.offset == 0


def test_truncated_header():
    with pytest.raises(TensorFormatError):
        decode_tensor(MAGIC + b"\x02")


def test_truncated_extents():
    with pytest.raises(TensorFormatError):
        decode_tensor(MAGIC + (3).to_bytes(4, "little") + (1).to_bytes(4, "little"))


def test_payload_length_mismatch():
    data = encode_tensor(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(TensorFormatError):
        decode_tensor(data[:-1])
    with pytest.raises(TensorFormatError):
        decode_tensor(data + b"\x00")
