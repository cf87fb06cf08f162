"""Penultimate-layer feature extraction and the feature file format.

The on-disk format is a short text header (row count, dimension, split,
dtype) followed by a binary block of little-endian int64 sample ids and the
little-endian feature rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..datasets import DataError

FEATURE_MAGIC = b"ddfeat v1\n"

_DTYPES = {"float64": "<f8", "float32": "<f4"}


@dataclass(frozen=True)
class FeatureMatrix:
    """One feature vector per sample, tagged with sample ids and split."""

    rows: np.ndarray        # (N, D)
    sample_ids: np.ndarray  # (N,) int64
    source_split: str

    def __post_init__(self):
        if self.rows.shape[0] != self.sample_ids.shape[0]:
            raise ValueError("row count must equal sample id count")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def extract_features(model, ds, batch_size: int = 256) -> FeatureMatrix:
    """Eval-mode penultimate activations for every sample of a dataset."""
    x = ds.images.astype(model.dtype, copy=False)
    chunks = [model.features(x[s:s + batch_size]) for s in range(0, ds.n, batch_size)]
    rows = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, model.feature_dim))
    if not np.isfinite(rows).all():
        raise FloatingPointError("non-finite feature activation")
    return FeatureMatrix(rows=rows, sample_ids=np.arange(ds.n, dtype=np.int64),
                         source_split=ds.split_tag)


def save_features(fm: FeatureMatrix, path, model_tag: str = "") -> None:
    dtype_name = fm.rows.dtype.name
    if dtype_name not in _DTYPES:
        raise ValueError(f"unsupported feature dtype {dtype_name}")
    header = (
        f"count={fm.rows.shape[0]}\n"
        f"dim={fm.dim}\n"
        f"split={fm.source_split}\n"
        f"dtype={dtype_name}\n"
        f"model={model_tag}\n"
        "end-header\n"
    )
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(fm.sample_ids, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(fm.rows, dtype=_DTYPES[dtype_name]).tobytes())


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if not raw.startswith(FEATURE_MAGIC):
        raise DataError(f"{path}: not a feature file")
    end = raw.index(b"end-header\n") + len(b"end-header\n")
    fields = dict(
        line.split("=", 1)
        for line in raw[len(FEATURE_MAGIC):end].decode("ascii").splitlines()
        if "=" in line
    )
    count, dim = int(fields["count"]), int(fields["dim"])
    wire = np.dtype(_DTYPES[fields["dtype"]])
    ids_bytes = count * 8
    rows_bytes = count * dim * wire.itemsize
    if len(raw) != end + ids_bytes + rows_bytes:
        raise DataError(f"{path}: feature payload size mismatch")
    ids = np.frombuffer(raw[end:end + ids_bytes], dtype="<i8").astype(np.int64)
    rows = np.frombuffer(raw[end + ids_bytes:], dtype=wire).reshape(count, dim)
    return FeatureMatrix(rows=rows.astype(fields["dtype"]), sample_ids=ids,
                         source_split=fields["split"])


def export_features_csv(fm: FeatureMatrix, path) -> None:
    dim = fm.dim
    lines = ["sample_id," + ",".join(f"f{i}" for i in range(dim))]
    for sid, row in zip(fm.sample_ids, fm.rows):
        lines.append(f"{int(sid)}," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
