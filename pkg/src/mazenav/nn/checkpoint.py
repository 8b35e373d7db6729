"""Binary checkpoint format for model parameters.

Layout: magic "MNAV", format version (u32 LE), then for each parameter:
name length (u32), name bytes (utf-8), shape rank (u32), dims (u32 each),
raw little-endian float64 values.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadCheckpoint

MAGIC = b"MNAV"
VERSION = 1


def save_params(path: str | Path, named: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, values in named:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            arr = np.ascontiguousarray(values, dtype="<f8")
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadCheckpoint(f"{path}: bad magic bytes")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise BadCheckpoint(f"{path}: unsupported version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(data):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
            pos += 8 * count
            out[name] = values.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise BadCheckpoint(f"{path}: truncated or corrupt ({exc})") from exc
    return out


def save_module(path: str | Path, module) -> None:
    save_params(path, [(n, p.data) for n, p in module.named_parameters()])


def load_module(path: str | Path, module) -> None:
    params = load_params(path)
    for name, tensor in module.named_parameters():
        if name not in params:
            raise BadCheckpoint(f"{path}: missing parameter {name}")
        if params[name].shape != tensor.data.shape:
            raise BadCheckpoint(
                f"{path}: shape mismatch for {name}: "
                f"{params[name].shape} vs {tensor.data.shape}"
            )
        tensor.data[...] = params[name]
