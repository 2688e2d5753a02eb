"""Checkpoint files.

Layout::

    b"CCDN"  | uint64 LE header length | UTF-8 JSON header | float64 LE payload

The header is ``{"format_version": 1, "config": {...}, "tensors":
{name: {"offset": <float index>, "shape": [...], "kind": "weight"|"buffer"}}}``.
Tensors are written in sorted-name order so equal models give equal bytes.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelParams, NetConfig

MAGIC = b"CCDN"
FORMAT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    table = {}
    chunks = []
    offset = 0
    entries = [(k, "weight", v) for k, v in params.weights.items()]
    entries += [(k, "buffer", v) for k, v in params.buffers.items()]
    for name, kind, arr in sorted(entries, key=lambda e: (e[1], e[0])):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"refusing to save non-finite tensor {name}")
        table[name] = {"offset": offset, "shape": list(arr.shape), "kind": kind}
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").ravel())
        offset += arr.size
    header = json.dumps({"format_version": FORMAT_VERSION,
                         "config": params.config.to_dict(),
                         "tensors": table}, sort_keys=True).encode("utf-8")
    payload = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload.tobytes())


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[4:12])
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    payload = np.frombuffer(data, dtype="<f8", offset=12 + hlen)
    weights, buffers = {}, {}
    for name, meta in header["tensors"].items():
        size = int(np.prod(meta["shape"], dtype=np.int64))
        arr = payload[meta["offset"]:meta["offset"] + size].astype(np.float64).reshape(meta["shape"])
        (weights if meta["kind"] == "weight" else buffers)[name] = arr
    return ModelParams(NetConfig.from_dict(header["config"]), weights, buffers)
