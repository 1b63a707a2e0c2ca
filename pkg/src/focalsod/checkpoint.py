"""Binary checkpoint format.

Little-endian layout::

    magic   8 bytes   b"FSODCKPT"
    version u32
    config  u32 length + UTF-8 JSON (RunConfig snapshot)
    epoch   u32
    count   u32
    count x entry:
        name   u16 length + UTF-8
        dtype  u8   (0 = float32, 1 = float64, 2 = int64)
        ndim   u8
        shape  ndim x u32
        data   raw little-endian scalars

Entry names are ``model.<param-or-buffer>`` or ``optim.<key>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"FSODCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    model_state: dict
    optim_state: dict
    epoch: int = 0


def encode(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(ckpt.config, sort_keys=True).encode()
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", ckpt.epoch)]
    entries = [("model." + k, v) for k, v in ckpt.model_state.items()]
    entries += [("optim." + k, v) for k, v in ckpt.optim_state.items()]
    parts.append(struct.pack("<I", len(entries)))
    for name, arr in entries:
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        code = _CODES[arr.dtype]
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> Checkpoint:
    view = memoryview(buf)
    pos = 0

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = 8
    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = take("<I")
    config = json.loads(bytes(view[pos:pos + cfg_len]).decode())
    pos += cfg_len
    (epoch,) = take("<I")
    (count,) = take("<I")
    model_state, optim_state = {}, {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = bytes(view[pos:pos + nlen]).decode()
        pos += nlen
        code, ndim = take("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        shape = take(f"<{ndim}I") if ndim else ()
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(view):
            raise CheckpointError(f"{name}: truncated data at byte {pos}")
        arr = np.frombuffer(view[pos:pos + nbytes], dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        pos += nbytes
        group, _, key = name.partition(".")
        (model_state if group == "model" else optim_state)[key] = arr
    return Checkpoint(config=config, model_state=model_state, optim_state=optim_state, epoch=epoch)


def save(path, model, config: dict, optimizer=None, epoch: int = 0) -> None:
    ckpt = Checkpoint(config=config, model_state=dict(model.state_dict()),
                      optim_state=optimizer.state() if optimizer is not None else {}, epoch=epoch)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode(ckpt))


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
