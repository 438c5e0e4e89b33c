"""Single-file checkpoint archive.

Layout::

    STFCKPT <version>\\n
    key=value\\n            (config snapshot and run metadata, any number)
    ---\\n
    <name> <d0,d1,...>\\n  (one block per array; empty shape for scalars)
    <raw little-endian float64 payload>

Arrays are written in insertion order, so save -> load -> save reproduces
the same bytes.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

MAGIC = b"STFCKPT"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def dumps(header: dict[str, str], arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + b" %d\n" % FORMAT_VERSION)
    for key, value in header.items():
        key, value = str(key), str(value)
        if "=" in key or "\n" in key or "\n" in value or key == "---":
            raise CheckpointError(f"header entry {key!r} cannot be stored")
        buf.write(f"{key}={value}\n".encode("utf-8"))
    buf.write(b"---\n")
    for name, arr in arrays.items():
        if not name or any(c.isspace() for c in name):
            raise CheckpointError(f"array name {name!r} cannot be stored")
        arr = np.asarray(arr, dtype=np.float64)
        shape = ",".join(str(d) for d in arr.shape)
        buf.write(f"{name} {shape}\n".encode("utf-8"))
        buf.write(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    stream = io.BytesIO(blob)
    first = stream.readline()
    parts = first.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError("not a checkpoint archive")
    if int(parts[1]) != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {parts[1].decode()}")
    header: dict[str, str] = {}
    while True:
        line = stream.readline()
        if not line:
            raise CheckpointError("truncated checkpoint header")
        line = line.decode("utf-8").rstrip("\n")
        if line == "---":
            break
        key, _, value = line.partition("=")
        header[key] = value
    arrays: dict[str, np.ndarray] = {}
    while True:
        line = stream.readline()
        if not line:
            break
        name, _, shape_text = line.decode("utf-8").rstrip("\n").partition(" ")
        shape = tuple(int(d) for d in shape_text.split(",")) if shape_text else ()
        count = int(np.prod(shape, dtype=np.int64))
        payload = stream.read(count * 8)
        if len(payload) != count * 8:
            raise CheckpointError(f"truncated payload for {name!r}")
        arrays[name] = np.frombuffer(payload, dtype=_LE_F64).astype(np.float64).reshape(shape)
    return header, arrays


def save(path, header: dict[str, str], arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(header, arrays))


def load(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
