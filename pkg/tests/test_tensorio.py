import numpy as np
import pytest

from upgan.tensorio import (
    TensorFormatError,
    read_sidecar,
    read_tensor,
    write_json,
    write_tensor,
)


def test_round_trip_shapes(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(4,), (3, 5), (2, 1, 8, 8), ()]:
        arr = rng.normal(size=shape).astype(np.float32)
        path = tmp_path / f"t{len(shape)}.upg1"
        write_tensor(path, arr)
        back = read_tensor(path)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)
        assert back.dtype == np.dtype("<f4")


def test_header_layout(tmp_path):
    path = tmp_path / "t.upg1"
    write_tensor(path, np.zeros((2, 3), dtype=np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"UPG1"
    assert int.from_bytes(raw[4:8], "little") == 2  # rank
    assert int.from_bytes(raw[8:12], "little") == 2  # dim 0
    assert int.from_bytes(raw[12:16], "little") == 3  # dim 1
    assert int.from_bytes(raw[16:20], "little") == 0  # dtype code f32
    assert len(raw) == 20 + 2 * 3 * 4


def test_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "t.upg1"
    write_tensor(path, np.ones((4, 4), dtype=np.float32))
    data = path.read_bytes()
    (tmp_path / "bad.upg1").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(TensorFormatError):
        read_tensor(tmp_path / "bad.upg1")
    (tmp_path / "short.upg1").write_bytes(data[:-8])
    with pytest.raises(TensorFormatError):
        read_tensor(tmp_path / "short.upg1")
    (tmp_path / "long.upg1").write_bytes(data + b"\x00")
    with pytest.raises(TensorFormatError):
        read_tensor(tmp_path / "long.upg1")


def test_sidecar(tmp_path):
    path = tmp_path / "t.upg1"
    write_tensor(path, np.zeros(3, dtype=np.float32), sidecar={"role": "input", "norm_lo": 0.0})
    meta = read_sidecar(path)
    assert meta == {"role": "input", "norm_lo": 0.0}


def test_canonical_json_byte_identical(tmp_path):
    payload = {"b": 2, "a": [1.5, 2.25], "nested": {"z": 0, "a": "x"}}
    p1 = write_json(tmp_path / "one.json", payload)
    p2 = write_json(tmp_path / "two.json", dict(reversed(list(payload.items()))))
    assert p1.read_bytes() == p2.read_bytes()
