"""Named-tensor archive file format.

Layout: magic b"BPTA" | format version (u32 LE) | header length (u64 LE) |
UTF-8 JSON header mapping name -> {dtype, shape, offset, byte_len} |
concatenated little-endian row-major payloads | CRC32 of the payload
region (u32 LE). Offsets are relative to the payload start. Round-trips
are bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

MAGIC = b"BPTA"
FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class ArchiveError(Exception):
    """Base error for tensor-archive files."""


class ArchiveFormatError(ArchiveError):
    """Bad magic, unsupported version, or malformed header."""


class ChecksumError(ArchiveError):
    """Payload CRC mismatch (truncation or corruption)."""


class MissingTensorError(ArchiveError):
    """A required tensor name is absent."""


class TensorShapeError(ArchiveError):
    """A tensor's stored shape disagrees with the expected one."""


def save_archive(tensors: dict, path) -> None:
    """Write name -> ndarray mapping; names are stored sorted."""
    entries = {}
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _DTYPE_NAMES:
            raise ArchiveFormatError(f"{name}: unsupported dtype {arr.dtype} (f32/f64 only)")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries[name] = {
            "dtype": _DTYPE_NAMES[arr.dtype],
            "shape": list(arr.shape),
            "offset": len(payload),
            "byte_len": len(raw),
        }
        payload.extend(raw)
    header = json.dumps(entries, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(bytes(payload))))


def load_archive(path) -> dict:
    """Read an archive back into a name -> ndarray mapping."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ArchiveFormatError(f"{path}: not a tensor archive (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ArchiveFormatError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack_from("<Q", blob, 8)
    header_end = 16 + header_len
    if len(blob) < header_end + 4:
        raise ChecksumError(f"{path}: file truncated")
    try:
        entries = json.loads(blob[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveFormatError(f"{path}: malformed header: {e}") from e
    payload = blob[header_end:-4]
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != stored_crc:
        raise ChecksumError(f"{path}: payload CRC mismatch")
    tensors = {}
    for name, meta in entries.items():
        try:
            dtype = _DTYPES[meta["dtype"]]
            shape = tuple(int(s) for s in meta["shape"])
            offset, byte_len = int(meta["offset"]), int(meta["byte_len"])
        except (KeyError, TypeError, ValueError) as e:
            raise ArchiveFormatError(f"{path}: bad header entry for {name!r}: {e}") from e
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if byte_len != expected or offset + byte_len > len(payload):
            raise ArchiveFormatError(f"{path}: inconsistent extent for {name!r}")
        arr = np.frombuffer(payload, dtype=dtype, count=expected // dtype.itemsize,
                            offset=offset).reshape(shape)
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    return tensors


def require_tensor(tensors: dict, name: str, shape=None, source: str = "archive") -> np.ndarray:
    """Fetch a named tensor, raising the distinct load errors."""
    if name not in tensors:
        raise MissingTensorError(f"{source}: missing tensor {name!r}")
    arr = tensors[name]
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise TensorShapeError(f"{source}: {name!r} has shape {arr.shape}, expected {tuple(shape)}")
    return arr
