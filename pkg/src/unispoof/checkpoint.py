"""Checkpoint serialization: JSON header plus raw little-endian payload.

Layout is a single JSON line (names, shapes, dtype, byte offsets,
config, history) terminated by a newline, followed by the concatenated
array payloads.  Reloading reproduces every array bit for bit, so a
reloaded model's forward pass is identical to the pre-save one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor

__all__ = [
    "Checkpoint", "save_checkpoint", "load_checkpoint", "params_hash",
    "with_prefix", "strip_prefix",
]

_FORMAT = "unispoof-checkpoint"
_SCHEMA = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _as_array(value) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def with_prefix(params: dict, prefix: str) -> dict:
    return {prefix + name: value for name, value in params.items()}


def strip_prefix(params: dict, prefix: str) -> dict:
    """Sub-dict of entries under `prefix`, with the prefix removed."""
    return {name[len(prefix):]: value for name, value in params.items()
            if name.startswith(prefix)}


@dataclass
class Checkpoint:
    """In-memory checkpoint: named float arrays plus run metadata."""

    params: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    dtype: str = "float32"

    def tensors(self, prefix: str = "", requires_grad: bool = True) -> dict[str, Tensor]:
        """Trainable Tensor views of a component's arrays (copies, so the
        checkpoint itself stays untouched by optimizer steps)."""
        sub = strip_prefix(self.params, prefix) if prefix else self.params
        return {name: Tensor(arr.copy(), requires_grad=requires_grad)
                for name, arr in sub.items()}

    def num_params(self) -> int:
        return sum(arr.size for arr in self.params.values())


def params_hash(params: dict) -> str:
    """Order-independent SHA-256 over names, shapes, and raw bytes."""
    digest = hashlib.sha256()
    for name in sorted(params):
        arr = _as_array(params[name])
        digest.update(name.encode("utf-8"))
        digest.update(repr(arr.shape).encode("ascii"))
        digest.update(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"),
                                                       copy=False).tobytes())
    return digest.hexdigest()


def save_checkpoint(path: Path | str, params: dict, config: dict | None = None,
                    history: dict | None = None) -> Path:
    path = Path(path)
    arrays = {name: _as_array(v) for name, v in params.items()}
    dtypes = {a.dtype.name for a in arrays.values()}
    if not dtypes <= set(_DTYPES):
        raise ValueError(f"checkpoint arrays must be float32/float64, got {dtypes}")
    if len(dtypes) > 1:
        raise ValueError(f"checkpoint arrays must share one dtype, got {dtypes}")
    dtype = dtypes.pop() if dtypes else "float32"

    entries = []
    offset = 0
    for name in sorted(arrays):
        arr = arrays[name]
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {
        "format": _FORMAT,
        "schema_version": _SCHEMA,
        "dtype": dtype,
        "params": entries,
        "config": config or {},
        "history": history or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for entry in entries:
            arr = arrays[entry["name"]]
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    return path


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: not a checkpoint file ({exc})") from exc
    if header.get("format") != _FORMAT:
        raise ValueError(f"{path}: unrecognized format {header.get('format')!r}")
    dtype = header["dtype"]
    np_dtype = np.dtype(_DTYPES[dtype])
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + count * np_dtype.itemsize
        if end > len(payload):
            raise ValueError(f"{path}: truncated payload for {entry['name']!r}")
        arr = np.frombuffer(payload[start:end], dtype=np_dtype).reshape(shape)
        params[entry["name"]] = arr.astype(dtype, copy=True)
    return Checkpoint(params=params, config=header["config"],
                      history=header["history"], dtype=dtype)
