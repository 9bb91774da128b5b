"""Checkpoint persistence: a raw little-endian float blob plus a JSON manifest.

The manifest records, per tensor: name, shape, dtype, and byte offset into
the blob.  Write order follows the module traversal order, so identical
states serialize to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPE_CODES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(state: dict[str, np.ndarray], prefix) -> tuple[Path, Path]:
    """Write ``state`` to ``<prefix>.bin`` and ``<prefix>.json``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    bin_path = prefix.with_suffix(".bin")
    manifest_path = prefix.with_suffix(".json")
    entries = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in state.items():
            dtype = str(arr.dtype)
            if dtype not in _DTYPE_CODES:
                raise ValueError(f"unsupported checkpoint dtype {dtype} for {name}")
            payload = np.ascontiguousarray(arr).astype(_DTYPE_CODES[dtype]).tobytes()
            fh.write(payload)
            entries.append({"name": name, "shape": list(arr.shape),
                            "dtype": dtype, "offset": offset})
            offset += len(payload)
    manifest = {"format": "mimnet-checkpoint/1", "byte_order": "little", "tensors": entries}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return bin_path, manifest_path


def load_checkpoint(prefix) -> dict[str, np.ndarray]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    if manifest.get("format") != "mimnet-checkpoint/1":
        raise ValueError(f"unrecognized checkpoint manifest format: {manifest.get('format')!r}")
    blob = prefix.with_suffix(".bin").read_bytes()
    state: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        code = _DTYPE_CODES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * np.dtype(code).itemsize
        start = entry["offset"]
        if start + nbytes > len(blob):
            raise ValueError(f"checkpoint blob truncated at tensor {entry['name']}")
        arr = np.frombuffer(blob[start:start + nbytes], dtype=code).reshape(entry["shape"])
        state[entry["name"]] = arr.astype(entry["dtype"])
    return state
