"""Binary container for named tensors plus free-form metadata.

Layout: 4-byte magic ``AECR``, u32 LE version (=1), u64 LE metadata
length, UTF-8 JSON, then raw little-endian tensor payloads.  The JSON
object maps each tensor name to ``{dtype, shape, offset, nbytes}``
(offset relative to the payload start) alongside arbitrary metadata
keys.  Writers emit tensors in lexicographic name order with contiguous
offsets, which makes the byte stream canonical: save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import base64
import json
import struct
import sys
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch

from .errors import FormatError

MAGIC = b"AECR"
VERSION = 1
_DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
_DESCRIPTOR_KEYS = {"dtype", "shape", "offset", "nbytes"}

if sys.byteorder != "little":  # payloads are raw LE bytes
    raise RuntimeError("big-endian hosts are not supported")


def _to_array(tensor) -> np.ndarray:
    if isinstance(tensor, torch.Tensor):
        arr = tensor.detach().cpu().contiguous().numpy()
    else:
        arr = np.ascontiguousarray(tensor)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def write_container(path: str, tensors: Mapping[str, "torch.Tensor | np.ndarray"],
                    metadata: Mapping | None = None) -> None:
    metadata = dict(metadata or {})
    clash = set(metadata) & set(tensors)
    if clash:
        raise FormatError(f"metadata key collides with tensor name: {sorted(clash)[0]}")
    doc: dict = {}
    payloads = []
    offset = 0
    for name in sorted(tensors):
        arr = _to_array(tensors[name])
        doc[name] = {
            "dtype": _DTYPE_NAMES[arr.dtype],
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": arr.nbytes,
        }
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    doc.update(metadata)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in payloads:
            fh.write(chunk)


def read_container(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (tensors, metadata); tensor arrays are read-only views."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}")
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header")
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (meta_len,) = struct.unpack_from("<Q", data, 8)
    if 16 + meta_len > len(data):
        raise FormatError(f"{path}: truncated metadata block")
    try:
        doc = json.loads(data[16:16 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata JSON: {exc}")
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: metadata must be a JSON object")
    payload = data[16 + meta_len:]
    tensors: dict[str, np.ndarray] = {}
    metadata: dict = {}
    for key, value in doc.items():
        if isinstance(value, dict) and set(value) == _DESCRIPTOR_KEYS:
            if value["dtype"] not in _DTYPES:
                raise FormatError(f"{path}: tensor {key}: unknown dtype {value['dtype']!r}")
            np_dtype = np.dtype(_DTYPES[value["dtype"]])
            shape = tuple(value["shape"])
            expected = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
            if value["nbytes"] != expected:
                raise FormatError(f"{path}: tensor {key}: nbytes/shape mismatch")
            end = value["offset"] + value["nbytes"]
            if end > len(payload):
                raise FormatError(f"{path}: tensor {key}: truncated payload")
            arr = np.frombuffer(payload, dtype=np_dtype,
                                count=int(np.prod(shape, dtype=np.int64)),
                                offset=value["offset"]).reshape(shape)
            tensors[key] = arr
        else:
            metadata[key] = value
    return tensors, metadata


@dataclass
class Checkpoint:
    """All learnable tensors of a run plus resume metadata."""

    tensors: dict[str, torch.Tensor]
    config: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    rng_state: str = ""  # base64 of the data-order generator state
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    meta = {
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    write_container(path, ckpt.tensors, meta)


def load_checkpoint(path: str) -> Checkpoint:
    arrays, meta = read_container(path)
    for key in ("config", "epoch", "step"):
        if key not in meta:
            raise FormatError(f"{path}: missing metadata key {key!r}")
    tensors = {name: torch.from_numpy(arr.copy()) for name, arr in arrays.items()}
    return Checkpoint(
        tensors=tensors,
        config=meta["config"],
        epoch=int(meta["epoch"]),
        step=int(meta["step"]),
        rng_state=str(meta.get("rng_state", "")),
        extra=meta.get("extra", {}),
    )


def encode_rng_state(gen: torch.Generator) -> str:
    return base64.b64encode(gen.get_state().numpy().tobytes()).decode("ascii")


def decode_rng_state(gen: torch.Generator, encoded: str) -> None:
    raw = base64.b64decode(encoded.encode("ascii"))
    gen.set_state(torch.from_numpy(np.frombuffer(raw, dtype=np.uint8).copy()))


def load_params_into(module: torch.nn.Module, tensors: Mapping[str, torch.Tensor],
                     prefix: str = "") -> None:
    """Copy named tensors into a module, checking names and shapes.

    Raises FormatError naming the first offending tensor (lexicographic
    order) on any missing name or shape mismatch.
    """
    state = module.state_dict()
    want = {prefix + name: tuple(p.shape) for name, p in state.items()}
    have = {name: tuple(t.shape) for name, t in tensors.items() if name.startswith(prefix)}
    for name in sorted(set(want) | set(have)):
        if name not in have:
            raise FormatError(f"missing tensor {name}")
        if name not in want:
            raise FormatError(f"unexpected tensor {name}")
        if want[name] != have[name]:
            raise FormatError(
                f"shape mismatch for {name}: checkpoint {have[name]}, model {want[name]}")
    with torch.no_grad():
        for name, param in state.items():
            param.copy_(tensors[prefix + name].to(param.dtype))
