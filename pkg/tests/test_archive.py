import numpy as np
import pytest

from bpclip import archive
from bpclip.archive import (ArchiveFormatError, ChecksumError,
                            MissingTensorError, TensorShapeError)


@pytest.fixture
def sample_tensors():
    rng = np.random.default_rng(42)
    return {
        "stage1.conv.weight": rng.normal(size=(8, 3, 3, 3)).astype(np.float32),
        "head.bias": rng.normal(size=(1,)).astype(np.float64),
        "pos": rng.normal(size=(4, 16)).astype(np.float32),
    }


def test_round_trip_bitwise_identical(tmp_path, sample_tensors):
    path = tmp_path / "params.bpta"
    archive.save_archive(sample_tensors, path)
    loaded = archive.load_archive(path)
    assert set(loaded) == set(sample_tensors)
    for name, arr in sample_tensors.items():
        assert loaded[name].dtype == arr.dtype
        assert loaded[name].shape == arr.shape
        assert loaded[name].tobytes() == arr.tobytes()


def test_save_is_deterministic(tmp_path, sample_tensors):
    p1, p2 = tmp_path / "a.bpta", tmp_path / "b.bpta"
    archive.save_archive(sample_tensors, p1)
    archive.save_archive(dict(reversed(list(sample_tensors.items()))), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_file_fails_checksum(tmp_path, sample_tensors):
    path = tmp_path / "params.bpta"
    archive.save_archive(sample_tensors, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(ChecksumError):
        archive.load_archive(path)


def test_corrupted_payload_fails_checksum(tmp_path, sample_tensors):
    path = tmp_path / "params.bpta"
    archive.save_archive(sample_tensors, path)
    blob = bytearray(path.read_bytes())
    blob[-20] ^= 0xFF  # flip a payload byte
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        archive.load_archive(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.bpta"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ArchiveFormatError):
        archive.load_archive(path)


def test_unsupported_version_rejected(tmp_path, sample_tensors):
    path = tmp_path / "params.bpta"
    archive.save_archive(sample_tensors, path)
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(ArchiveFormatError):
        archive.load_archive(path)


def test_missing_and_mismatched_tensor_errors(tmp_path, sample_tensors):
    path = tmp_path / "params.bpta"
    archive.save_archive(sample_tensors, path)
    loaded = archive.load_archive(path)
    arr = archive.require_tensor(loaded, "stage1.conv.weight", shape=(8, 3, 3, 3))
    assert arr.shape == (8, 3, 3, 3)
    with pytest.raises(MissingTensorError):
        archive.require_tensor(loaded, "not.there")
    with pytest.raises(TensorShapeError):
        archive.require_tensor(loaded, "head.bias", shape=(2,))


def test_non_float_dtype_rejected(tmp_path):
    with pytest.raises(ArchiveFormatError):
        archive.save_archive({"x": np.arange(3, dtype=np.int32)}, tmp_path / "x.bpta")
