"""Binary weight persistence with bit-exact round-trips.

Layout (all integers little-endian):

    magic   4 bytes  "DDSP"
    version u32      currently 1
    count   u32      number of named arrays
    then per array:
      name_len u16, name UTF-8 bytes,
      dtype    u8   (0 = float32, 1 = float64),
      rank     u8,
      dims     rank * u32,
      data     raw little-endian values, C order.

Parameters and running statistics are stored side by side under their dotted
names; loading writes values back into existing weight structures in place,
so a loaded model is bit-identical to the saved one.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from .errors import CheckpointError, DomainError

MAGIC = b"DDSP"
VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_arrays(path, entries: Iterable[tuple[str, np.ndarray]]) -> None:
    entries = list(entries)
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise DomainError("duplicate array names in checkpoint")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries:
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _DTYPE_TAGS:
                raise DomainError(f"cannot serialize dtype {arr.dtype} for {name!r}")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def _read(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        version, count = struct.unpack("<II", _read(f, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(f, 2, "name length"))
            name = _read(f, name_len, "name").decode("utf-8")
            tag, rank = struct.unpack("<BB", _read(f, 2, "dtype/rank"))
            if tag not in _TAG_DTYPES:
                raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
            dims = struct.unpack(f"<{rank}I", _read(f, 4 * rank, "dims"))
            dtype = _TAG_DTYPES[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            data = np.frombuffer(_read(f, nbytes, f"data of {name!r}"), dtype=dtype)
            if name in out:
                raise CheckpointError(f"{path}: duplicate array {name!r}")
            out[name] = data.reshape(dims).astype(dtype.newbyteorder("="), copy=True)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after {count} arrays")
    return out


def save_model(path, model) -> None:
    """Write all parameters and running statistics of a Model."""
    entries = [(name, t.data) for name, t in model.parameters()]
    entries += model.buffers()
    save_arrays(path, entries)


def load_model(path, model) -> None:
    """Restore a Model's parameters and buffers in place; strict name matching."""
    stored = load_arrays(path)
    targets: list[tuple[str, np.ndarray]] = [(n, t.data) for n, t in model.parameters()]
    targets += model.buffers()
    names = {n for n, _ in targets}
    missing = sorted(names - stored.keys())
    extra = sorted(stored.keys() - names)
    if missing or extra:
        raise CheckpointError(
            f"{path}: arrays do not match the model; missing {missing[:5]}, unexpected {extra[:5]}"
        )
    for name, dest in targets:
        src = stored[name]
        if src.shape != dest.shape:
            raise CheckpointError(f"{path}: {name!r} has shape {src.shape}, model wants {dest.shape}")
        if src.dtype != dest.dtype:
            src = src.astype(dest.dtype)
        dest[...] = src
