"""Versioned binary model checkpoints.

Layout: 8-byte magic, a little-endian uint32 header length, a JSON header
(architecture spec, seeds, dtype, and the shape-tagged tensor directory),
then the raw little-endian tensor blocks in directory order. Parameters and
batch-norm running statistics are both stored.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .datasets import DataError
from .zoo import ModelSpec, build

MAGIC = b"DDLABCK1"
FORMAT_VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(model, path, train_seed: int | None = None) -> None:
    dtype_name = model.dtype.name
    if dtype_name not in _DTYPES:
        raise ValueError(f"unsupported checkpoint dtype {dtype_name}")
    tensors = list(zip(model.param_names, model.params)) + \
        list(zip(model.buffer_names, model.buffers))
    header = {
        "format_version": FORMAT_VERSION,
        "family": model.spec.family,
        "width_k": model.spec.width_k,
        "input_shape": list(model.spec.input_shape),
        "class_count": model.spec.class_count,
        "init_seed": model.init_seed,
        "train_seed": train_seed,
        "dtype": dtype_name,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("ascii")
    wire = _DTYPES[dtype_name]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype=wire).tobytes())


def load_checkpoint(path) -> tuple:
    """Rebuild the model and return (model, header dict)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("ascii"))
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    spec = ModelSpec(
        family=header["family"],
        width_k=header["width_k"],
        input_shape=tuple(header["input_shape"]),
        class_count=header["class_count"],
    )
    dtype = np.dtype(header["dtype"])
    model = build(spec, seed=header["init_seed"], dtype=dtype)
    targets = list(zip(model.param_names, model.params)) + \
        list(zip(model.buffer_names, model.buffers))
    if [t["name"] for t in header["tensors"]] != [name for name, _ in targets]:
        raise DataError(f"{path}: tensor directory does not match the declared architecture")
    wire = np.dtype(_DTYPES[header["dtype"]])
    offset = 12 + hlen
    for entry, (_, arr) in zip(header["tensors"], targets):
        shape = tuple(entry["shape"])
        if shape != arr.shape:
            raise DataError(f"{path}: tensor {entry['name']} has shape {shape}, expected {arr.shape}")
        nbytes = int(np.prod(shape)) * wire.itemsize if shape else wire.itemsize
        block = raw[offset:offset + nbytes]
        if len(block) != nbytes:
            raise DataError(f"{path}: truncated tensor block for {entry['name']}")
        arr[...] = np.frombuffer(block, dtype=wire).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after tensor blocks")
    return model, header
