"""Flat named-tensor checkpoint container shared by all networks.

File layout (little-endian)::

    bytes 0..7    magic b"AWTC0001"
    bytes 8..15   uint64 header length L
    bytes 16..16+L  UTF-8 JSON header:
        {"meta": {...},
         "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    remainder     concatenated row-major tensor payloads

Offsets are relative to the end of the header.  Supported dtypes are
float32, float64 and int64.  Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .errors import ConfigError

MAGIC = b"AWTC0001"
_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64}


def save_tensors(path, tensors: Mapping[str, object], meta: dict | None = None) -> None:
    """Write named tensors plus a JSON metadata block."""
    entries = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ConfigError(f"unsupported checkpoint dtype {dtype} for {name!r}")
        blob = np.ascontiguousarray(arr).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta or {}, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (tensors, meta) from a container file."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ConfigError(f"{path} is not a tensor container (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    payload = data[16 + hlen :]
    tensors = {}
    for e in header["tensors"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
        tensors[e["name"]] = arr
    return tensors, header["meta"]


def config_hash(config: dict) -> str:
    """Stable short fingerprint of a configuration dictionary."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def module_tensors(prefix: str, module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def load_module(prefix: str, module: torch.nn.Module, tensors: Mapping[str, np.ndarray]) -> None:
    state = {}
    plen = len(prefix) + 1
    for name, arr in tensors.items():
        if name.startswith(prefix + "."):
            state[name[plen:]] = torch.from_numpy(arr)
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise ConfigError(f"checkpoint missing tensors for {prefix}: {sorted(missing)[:3]}...")
    module.load_state_dict(state)
