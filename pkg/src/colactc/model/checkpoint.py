"""Versioned binary checkpoints.

Layout (little-endian)::

    8 bytes   magic  b"COLACTC\\0"
    u32       format version (1)
    u64       header length in bytes
    header    UTF-8 JSON: {"format_version", "dtype" ("<f4" | "<f8"), "seed",
              "config", "tensors": [{"name", "shape", "offset", "nbytes"}],
              "aliases": {alias: target}, "extra"}
    blobs     raw C-order parameter data; offsets are relative to the first
              byte after the header
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from colactc.model.config import TrainConfig
from colactc.model.network import Params

MAGIC = b"COLACTC\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict, cfg: TrainConfig, extra: dict | None = None) -> None:
    dtype = np.dtype(cfg.dtype).newbyteorder("<")
    tensors = []
    blobs = []
    off = 0
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": off, "nbytes": len(data)})
        blobs.append(data)
        off += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": dtype.str,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "tensors": tensors,
        "aliases": {"ctc.w": "out.w"} if cfg.share_params else {},
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", fh.read(12))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    return json.loads(fh.read(hlen).decode("utf-8"))


def load_checkpoint(path) -> tuple[Params, TrainConfig, dict]:
    """Returns ``(params, config, header)``."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        blob = fh.read()
    dtype = np.dtype(header["dtype"])
    arrays = {}
    for t in header["tensors"]:
        end = t["offset"] + t["nbytes"]
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated tensor {t['name']!r}")
        arrays[t["name"]] = np.frombuffer(blob[t["offset"] : end], dtype=dtype).reshape(t["shape"])
    cfg = TrainConfig.from_dict(header["config"])
    return Params(arrays, dtype.newbyteorder("=")), cfg, header
