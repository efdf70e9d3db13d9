"""Deterministic checkpoint files: a JSON header plus raw float64 buffers.

Tensor names are stored sorted, buffers little-endian, so identical parameters
always produce byte-identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"RITPCKPT"
VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Write {name: tensor-like} with optional JSON-serializable metadata."""
    arrays = {}
    for name in sorted(tensors):
        value = tensors[name]
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arrays[name] = np.asarray(value, dtype=np.float64)  # tobytes() handles layout
    header = {
        "version": VERSION,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in sorted(arrays)],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for name in sorted(arrays):
            fh.write(arrays[name].astype("<f8").tobytes())


def load_checkpoint(path):
    """Return (tensors: {name: np.ndarray}, meta: dict)."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(raw[start : start + hlen].decode())
    if header["version"] != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
    offset = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
        offset += count * 8
    return tensors, header["meta"]


def module_tensors(module: torch.nn.Module) -> dict:
    return {name: p for name, p in module.state_dict().items()}


def load_into_module(module: torch.nn.Module, tensors: dict) -> None:
    state = {k: torch.as_tensor(v, dtype=torch.float64) for k, v in tensors.items()}
    module.load_state_dict(state)
