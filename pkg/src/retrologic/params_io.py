"""Versioned binary container for named float64 arrays, plus a JSON sidecar.

Layout (little-endian)::

    magic  b"RLGP"   version u16   count u32
    per entry: name_len u16, name utf-8, ndim u8, dims u32 * ndim
    payload: every array in entry order, row-major float64
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"RLGP"
VERSION = 1


class ContainerError(ValueError):
    pass


def save_arrays(path, arrays: Mapping[str, np.ndarray], metadata: Mapping | None = None) -> None:
    path = Path(path)
    header = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    payload = []
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f8")
        header.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", a.ndim))
        header.append(struct.pack(f"<{a.ndim}I", *a.shape))
        payload.append(a.tobytes())
    path.write_bytes(b"".join(header + payload))
    if metadata is not None:
        sidecar_path(path).write_text(json.dumps(dict(metadata), indent=2, sort_keys=True) + "\n")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContainerError(f"{path}: not a parameter container")
    try:
        version, count = struct.unpack_from("<HI", data, 4)
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported container version {version}")
        pos = 10
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            entries.append((name, shape))
        out = {}
        for name, shape in entries:
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(data):
                raise ContainerError(f"{path}: truncated payload")
            out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise ContainerError(f"{path}: truncated header") from exc
    if pos != len(data):
        raise ContainerError(f"{path}: trailing bytes")
    return out


def load_metadata(path) -> dict:
    return json.loads(sidecar_path(path).read_text())
