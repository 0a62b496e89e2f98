"""Named-tensor checkpoint files.

Each record is ``u32 name_len, name (utf-8), u32 ndim, ndim x u32 dims``
followed by the values as little-endian float32. All integers are
little-endian. Records repeat until end of file.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        for name, arr in tensors.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())
    tmp.replace(path)


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    out: dict[str, np.ndarray] = {}
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(
                f"{path}: truncated {what} at byte {pos}: need {n}, have {len(data) - pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(take(4 * count, f"values of {name!r}"), dtype="<f4")
        out[name] = values.reshape(shape).astype(np.float32)
    return out
