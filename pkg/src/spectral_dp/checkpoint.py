"""Checkpoint files.

Layout::

    8 bytes   magic  b"SPDPCKPT"
    4 bytes   format version (uint32, little-endian)
    8 bytes   metadata length n (uint64, little-endian)
    n bytes   UTF-8 JSON metadata
    rest      every parameter array, float64 little-endian, in metadata order

The metadata echoes the model spec and training config and records the step
counter and the privacy ledger.  Noise and sampling streams are keyed by
``(seed, step)``, so the step counter is the whole RNG position.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import ModelSpec
from .trainer import TrainState

MAGIC = b"SPDPCKPT"
VERSION = 1
_HEAD = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temp file in the same directory and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_ledger(ledger):
    runs = []
    for q, sigma in ledger:
        if runs and runs[-1][0] == q and runs[-1][1] == sigma:
            runs[-1][2] += 1
        else:
            runs.append([q, sigma, 1])
    return runs


def _decode_ledger(runs):
    out = []
    for q, sigma, count in runs:
        out.extend([(float(q), float(sigma))] * int(count))
    return out


def dumps(spec: ModelSpec, state: TrainState, config: dict | None = None) -> bytes:
    arrays = [np.asarray(a, dtype="<f8") for group in state.params for a in group]
    meta = {
        "model": spec.to_dict(),
        "config": config or {},
        "step": state.step,
        "ledger": _encode_ledger(state.ledger),
        "shapes": [[list(a.shape) for a in group] for group in state.params],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a).tobytes() for a in arrays)
    return _HEAD.pack(MAGIC, VERSION, len(blob)) + blob + body


def loads(data: bytes):
    """Returns ``(spec, state, config)``."""
    if len(data) < _HEAD.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, n = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _HEAD.size
    try:
        meta = json.loads(data[start : start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    off = start + n
    params = []
    for group in meta["shapes"]:
        arrs = []
        for shape in group:
            count = int(np.prod(shape))
            if off + 8 * count > len(data):
                raise CheckpointError("truncated checkpoint body")
            arrs.append(np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape))
            off += 8 * count
        params.append(arrs)
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} unexpected trailing bytes in checkpoint")
    state = TrainState(params, int(meta["step"]), _decode_ledger(meta["ledger"]))
    return ModelSpec.from_dict(meta["model"]), state, meta.get("config", {})


def save(path, spec: ModelSpec, state: TrainState, config: dict | None = None) -> None:
    atomic_write(path, dumps(spec, state, config))


def load(path):
    return loads(Path(path).read_bytes())
