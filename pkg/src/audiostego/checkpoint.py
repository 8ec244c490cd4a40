"""Versioned named-tensor checkpoint files.

Layout (little-endian)::

    magic      4s   b"THII"
    version    u16
    flags      u16  (reserved, 0)
    meta_len   u64
    meta       meta_len bytes of UTF-8 JSON
    n_tensors  u32
    table      n_tensors entries:
                 name_len u16, name, dtype u8, ndim u8, dims u64 * ndim,
                 offset u64, nbytes u64
    payload    raw C-order tensor bytes at the recorded absolute offsets,
               each aligned to 8 bytes

Offsets are strictly increasing and every tensor lies inside the file.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptHeaderError, TruncatedPayloadError, UnsupportedVersionError
from .fileio import atomic_write_bytes
from .inn import INNStack

MAGIC = b"THII"
VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("<i4"), 5: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}

_HEAD = struct.Struct("<4sHHQ")


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class TableEntry:
    name: str
    dtype: np.dtype
    shape: tuple
    offset: int
    nbytes: int


def _align(n: int) -> int:
    return (n + 7) & ~7


def encode(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(ckpt.meta, sort_keys=True).encode()
    arrays = []
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if dt not in _CODES:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
        arrays.append((name.encode(), arr.astype(dt, copy=False)))

    table_size = 4 + sum(2 + len(n) + 2 + 8 * a.ndim + 16 for n, a in arrays)
    offset = _align(_HEAD.size + len(meta) + table_size)
    table = io.BytesIO()
    table.write(struct.pack("<I", len(arrays)))
    offsets = []
    for name, arr in arrays:
        table.write(struct.pack("<H", len(name)))
        table.write(name)
        table.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        table.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        table.write(struct.pack("<QQ", offset, arr.nbytes))
        offsets.append(offset)
        offset = _align(offset + max(arr.nbytes, 1))

    out = io.BytesIO()
    out.write(_HEAD.pack(MAGIC, VERSION, 0, len(meta)))
    out.write(meta)
    out.write(table.getvalue())
    for (_, arr), off in zip(arrays, offsets):
        out.write(b"\0" * (off - out.tell()))
        out.write(arr.tobytes())
    return out.getvalue()


def read_table(buf: bytes) -> tuple[dict, list[TableEntry]]:
    if len(buf) < _HEAD.size:
        raise CorruptHeaderError("file too short for a checkpoint header")
    magic, version, _flags, meta_len = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CorruptHeaderError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} not supported (expected {VERSION})")
    pos = _HEAD.size
    try:
        meta = json.loads(buf[pos:pos + meta_len].decode())
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + nlen].decode()
            pos += 2 + nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            offset, nbytes = struct.unpack_from("<QQ", buf, pos)
            pos += 16
            entries.append(TableEntry(name, _DTYPES[code], tuple(shape), offset, nbytes))
    except (struct.error, UnicodeDecodeError, ValueError, KeyError) as exc:
        raise CorruptHeaderError(f"unreadable checkpoint header: {exc}") from exc
    last = pos
    for e in entries:
        if e.offset < last:
            raise CorruptHeaderError(f"tensor {e.name} overlaps the header or a previous tensor")
        if e.nbytes != int(np.prod(e.shape, dtype=np.int64)) * e.dtype.itemsize:
            raise CorruptHeaderError(f"tensor {e.name} size disagrees with its shape")
        last = e.offset + e.nbytes
    return meta, entries


def decode(buf: bytes) -> Checkpoint:
    meta, entries = read_table(buf)
    tensors = {}
    for e in entries:
        if e.offset + e.nbytes > len(buf):
            raise TruncatedPayloadError(
                f"tensor {e.name} needs bytes up to {e.offset + e.nbytes}, file has {len(buf)}")
        arr = np.frombuffer(buf, dtype=e.dtype, count=int(np.prod(e.shape, dtype=np.int64)), offset=e.offset)
        tensors[e.name] = arr.reshape(e.shape).copy()
    return Checkpoint(meta, tensors)


def save(path: str | Path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, encode(ckpt))


def load(path: str | Path) -> Checkpoint:
    return decode(Path(path).read_bytes())


# -- stacks ------------------------------------------------------------------

def stack_tensors(stack: INNStack, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in stack.state_dict().items()}


def stack_spec(stack: INNStack) -> dict:
    return {
        "cover_channels": stack.cover_channels,
        "secret_channels": stack.secret_channels,
        "n_blocks": len(stack.blocks),
        "hidden": stack.hidden,
    }


def pack_layers(layers: dict[int, INNStack], meta: dict) -> Checkpoint:
    """Bundle numbered layers (1 = image layer) with run metadata."""
    meta = dict(meta)
    meta["layers"] = {str(k): stack_spec(s) for k, s in sorted(layers.items())}
    tensors = {}
    for k, s in sorted(layers.items()):
        tensors.update(stack_tensors(s, f"layer{k}"))
    return Checkpoint(meta, tensors)


def unpack_layers(ckpt: Checkpoint) -> dict[int, INNStack]:
    layers = {}
    for key, spec in ckpt.meta.get("layers", {}).items():
        k = int(key)
        prefix = f"layer{k}."
        state = {name[len(prefix):]: torch.from_numpy(arr) for name, arr in ckpt.tensors.items()
                 if name.startswith(prefix)}
        dtype = next(iter(state.values())).dtype if state else torch.float32
        stack = INNStack(spec["cover_channels"], spec["secret_channels"], spec["n_blocks"], spec["hidden"]).to(dtype)
        try:
            stack.load_state_dict(state)
        except RuntimeError as exc:
            raise CorruptHeaderError(f"layer {k} weights do not match its spec: {exc}") from exc
        layers[k] = stack
    return layers
