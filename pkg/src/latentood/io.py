"""Binary tensor files and PGM image dumps.

Tensor layout (all little-endian): magic ``LDT1``, uint32 rank, ``rank`` uint32
dims, then float32 payload in row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"LDT1"
_U32_MAX = 2**32 - 1


class TensorFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte {offset})")
        self.offset = offset


def encode_tensor(tensor) -> bytes:
    arr = np.array(tensor, dtype="<f4", order="C", copy=True)
    if any(dim > _U32_MAX for dim in arr.shape):
        raise TensorFormatError(f"dimension exceeds uint32 range: {arr.shape}", 8)
    head = TENSOR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return head + arr.tobytes()


def decode_tensor(raw: bytes) -> np.ndarray:
    if raw[:4] != TENSOR_MAGIC:
        raise TensorFormatError(f"bad magic {raw[:4]!r}, expected {TENSOR_MAGIC!r}", 0)
    if len(raw) < 8:
        raise TensorFormatError("truncated rank field", len(raw))
    (rank,) = struct.unpack_from("<I", raw, 4)
    dims_end = 8 + 4 * rank
    if len(raw) < dims_end:
        raise TensorFormatError(f"truncated dims for rank {rank}", len(raw))
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    count = 1
    for dim in dims:
        count *= dim
    expected = dims_end + 4 * count
    if len(raw) < expected:
        raise TensorFormatError(f"payload truncated: dims {dims} need {expected} bytes, have {len(raw)}", len(raw))
    if len(raw) > expected:
        raise TensorFormatError(f"{len(raw) - expected} trailing bytes", expected)
    return np.frombuffer(raw, dtype="<f4", count=count, offset=dims_end).reshape(dims).astype(np.float32)


def save_tensor(path, tensor) -> None:
    Path(path).write_bytes(encode_tensor(tensor))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def save_pgm(path, image: np.ndarray) -> None:
    """Write one [-1, 1] image as 8-bit binary PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    q = np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + q.tobytes())


def load_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise ValueError("only 8-bit binary PGM is supported")
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(np.float64) / 127.5 - 1.0


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
