"""Dataset loading, subsampling, and one-shot label-noise injection.

Readers for the two on-disk binary formats:

* MNIST IDX files (big-endian headers, magic 2051 for images and 2049 for
  labels), transparently gunzipped when the file starts with the gzip magic.
  Pixels are scaled to [0, 1]; MNIST gets no further normalization.
* CIFAR-10 binary batches (3073-byte records: one label byte followed by
  3072 pixel bytes in R, G, B plane order). Each channel is normalized as
  (x - 0.5) / 0.5, so stored values lie in [-1, 1].

Label noise is injected exactly once per experiment: a fixed-size subset of
sample indices is flagged and re-labeled uniformly at random over all
classes (the drawn label may coincide with the true one; the flag, not label
inequality, is what marks a sample as noisy). The full flip table is
persisted as a NoiseMap text file so any run can be reproduced bit for bit.
"""

from __future__ import annotations

import gzip
import hashlib
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073
CIFAR_CLASSES = 10
MNIST_CLASSES = 10

NOISE_MAP_FORMAT = "ddnoise v1"
NOISE_CONVENTION = "uniform-inclusive"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}


class DataError(Exception):
    """Malformed, truncated, or inconsistent data files."""


@dataclass(frozen=True)
class LabeledDataset:
    """Images plus true labels, assigned (possibly noisy) labels, and a noise mask.

    images has shape (N, C, H, W). assigned_labels are the training targets;
    they differ from true_labels exactly on the flagged indices.
    """

    images: np.ndarray
    true_labels: np.ndarray
    assigned_labels: np.ndarray
    noise_mask: np.ndarray
    class_count: int
    split_tag: str

    def __post_init__(self):
        n = self.images.shape[0]
        if not (len(self.true_labels) == len(self.assigned_labels) == len(self.noise_mask) == n):
            raise ValueError("per-sample sequences must all have length N")
        if self.split_tag not in ("train", "test"):
            raise ValueError(f"split_tag must be 'train' or 'test', got {self.split_tag!r}")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def noisy_count(self) -> int:
        return int(self.noise_mask.sum())


@dataclass(frozen=True)
class NoiseMap:
    """Record of one noise injection: which indices were flipped and to what."""

    seed: int
    p: float
    n: int
    class_count: int
    entries: np.ndarray  # (count, 3) int64 rows of (sample_index, true, assigned)
    convention: str = NOISE_CONVENTION


def _read_maybe_gzip(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _find_file(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise DataError(f"missing dataset file {name}[.gz] in {directory}")


def _parse_idx_images(data: bytes, source: str) -> np.ndarray:
    if len(data) < 16:
        raise DataError(f"{source}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != MNIST_IMAGE_MAGIC:
        raise DataError(f"{source}: wrong magic {magic:#010x}, expected image magic 0x00000803")
    body = data[16:]
    if len(body) != count * rows * cols:
        raise DataError(f"{source}: truncated image data ({len(body)} bytes for {count} images)")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)


def _parse_idx_labels(data: bytes, source: str) -> np.ndarray:
    if len(data) < 8:
        raise DataError(f"{source}: truncated IDX header")
    magic, count = struct.unpack(">II", data[:8])
    if magic != MNIST_LABEL_MAGIC:
        raise DataError(f"{source}: wrong magic {magic:#010x}, expected label magic 0x00000801")
    body = data[8:]
    if len(body) != count:
        raise DataError(f"{source}: truncated label data ({len(body)} bytes for {count} labels)")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def load_mnist(path, split: str, dtype=np.float64) -> LabeledDataset:
    """Load one MNIST split from IDX files under `path`.

    Returns images of shape (N, 1, 28, 28) with raw bytes divided by 255 and
    no further normalization.
    """
    if split not in MNIST_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    directory = Path(path)
    image_name, label_name = MNIST_FILES[split]
    images = _parse_idx_images(_read_maybe_gzip(_find_file(directory, image_name)), image_name)
    labels = _parse_idx_labels(_read_maybe_gzip(_find_file(directory, label_name)), label_name)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"image/label count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    n = images.shape[0]
    scaled = (images.astype(dtype) / 255.0).reshape(n, 1, images.shape[1], images.shape[2])
    return LabeledDataset(
        images=scaled,
        true_labels=labels,
        assigned_labels=labels.copy(),
        noise_mask=np.zeros(n, dtype=bool),
        class_count=MNIST_CLASSES,
        split_tag=split,
    )


def load_cifar10(path, split: str, dtype=np.float64) -> LabeledDataset:
    """Load one CIFAR-10 split from binary batch files under `path`.

    Returns images of shape (N, 3, 32, 32) with every channel normalized as
    (x - 0.5) / 0.5 after the raw bytes are scaled to [0, 1].
    """
    if split not in CIFAR_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    directory = Path(path)
    if not any((directory / name).exists() for name in CIFAR_FILES[split]):
        nested = directory / "cifar-10-batches-bin"
        if nested.is_dir():
            directory = nested
    all_labels = []
    all_pixels = []
    for name in CIFAR_FILES[split]:
        raw = _read_maybe_gzip(_find_file(directory, name))
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise DataError(f"{name}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0].astype(np.int64)
        if labels.max(initial=0) >= CIFAR_CLASSES:
            raise DataError(f"{name}: label byte {labels.max()} out of range [0, {CIFAR_CLASSES})")
        all_labels.append(labels)
        all_pixels.append(records[:, 1:])
    labels = np.concatenate(all_labels)
    pixels = np.concatenate(all_pixels).reshape(-1, 3, 32, 32)
    images = (pixels.astype(dtype) / 255.0 - 0.5) / 0.5
    return LabeledDataset(
        images=images,
        true_labels=labels,
        assigned_labels=labels.copy(),
        noise_mask=np.zeros(labels.shape[0], dtype=bool),
        class_count=CIFAR_CLASSES,
        split_tag=split,
    )


def subsample(ds: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Keep a uniformly random subset of n samples, order preserved ascending.

    Must run before noise injection so the flip table refers to final indices.
    """
    if n > ds.n:
        raise ValueError(f"cannot subsample {n} from {ds.n} samples")
    if ds.noise_mask.any():
        raise ValueError("subsample must be applied before noise injection")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(ds.n, size=n, replace=False))
    return LabeledDataset(
        images=ds.images[idx],
        true_labels=ds.true_labels[idx],
        assigned_labels=ds.assigned_labels[idx],
        noise_mask=ds.noise_mask[idx],
        class_count=ds.class_count,
        split_tag=ds.split_tag,
    )


def _noisy_count(p: float, n: int) -> int:
    # floor(p*n), guarded against float dust when p*n is mathematically integral
    return int(math.floor(round(p * n, 9)))


def inject_label_noise(ds: LabeledDataset, p: float, seed: int) -> tuple[LabeledDataset, NoiseMap]:
    """Flag floor(p*N) samples and assign each a uniformly random class label.

    The draw happens once per experiment, never per epoch. Pure in (ds, p,
    seed): identical inputs give identical outputs.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"noise ratio p must lie in [0, 1], got {p}")
    if ds.noise_mask.any():
        raise ValueError("dataset already noise-injected")
    rng = np.random.default_rng(seed)
    count = _noisy_count(p, ds.n)
    flagged = np.sort(rng.choice(ds.n, size=count, replace=False))
    new_labels = rng.integers(0, ds.class_count, size=count, dtype=np.int64)

    assigned = ds.assigned_labels.copy()
    mask = np.zeros(ds.n, dtype=bool)
    assigned[flagged] = new_labels
    mask[flagged] = True

    entries = np.stack([flagged, ds.true_labels[flagged], new_labels], axis=1).astype(np.int64) \
        if count else np.zeros((0, 3), dtype=np.int64)
    noisy = replace(ds, assigned_labels=assigned, noise_mask=mask)
    return noisy, NoiseMap(seed=seed, p=p, n=ds.n, class_count=ds.class_count, entries=entries)


def apply_noise_map(ds: LabeledDataset, nm: NoiseMap) -> LabeledDataset:
    """Re-apply a stored noise map to the clean dataset it was drawn from."""
    if ds.noise_mask.any():
        raise ValueError("dataset already noise-injected")
    if nm.n != ds.n:
        raise DataError(f"noise map was drawn for N={nm.n}, dataset has N={ds.n}")
    if nm.entries.shape[0]:
        idx = nm.entries[:, 0]
        if idx.min() < 0 or idx.max() >= ds.n:
            raise DataError(f"noise map index {idx.max()} out of range for dataset of size {ds.n}")
        if not np.array_equal(ds.true_labels[idx], nm.entries[:, 1]):
            raise DataError("noise map true labels disagree with dataset; wrong dataset or seed")
    assigned = ds.assigned_labels.copy()
    mask = np.zeros(ds.n, dtype=bool)
    if nm.entries.shape[0]:
        assigned[nm.entries[:, 0]] = nm.entries[:, 2]
        mask[nm.entries[:, 0]] = True
    return replace(ds, assigned_labels=assigned, noise_mask=mask)


def _noise_map_body(nm: NoiseMap) -> str:
    lines = [
        NOISE_MAP_FORMAT,
        f"seed={nm.seed}",
        f"p={nm.p!r}",
        f"n={nm.n}",
        f"classes={nm.class_count}",
        f"convention={nm.convention}",
        f"entries={nm.entries.shape[0]}",
        "index,true,assigned",
    ]
    lines.extend(f"{int(i)},{int(t)},{int(a)}" for i, t, a in nm.entries)
    return "\n".join(lines) + "\n"


def save_noise_map(nm: NoiseMap, path) -> None:
    body = _noise_map_body(nm)
    digest = hashlib.sha256(body.encode("ascii")).hexdigest()
    Path(path).write_text(body + f"checksum={digest}\n", encoding="ascii")


def load_noise_map(path) -> NoiseMap:
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if not lines or lines[0] != NOISE_MAP_FORMAT:
        raise DataError(f"unsupported noise map format line: {lines[0] if lines else '<empty>'!r}")
    if not lines[-1].startswith("checksum="):
        raise DataError("noise map missing checksum line")
    body = "\n".join(lines[:-1]) + "\n"
    digest = hashlib.sha256(body.encode("ascii")).hexdigest()
    if lines[-1] != f"checksum={digest}":
        raise DataError("noise map checksum failure")

    header = {}
    for line in lines[1:7]:
        key, _, value = line.partition("=")
        header[key] = value
    count = int(header["entries"])
    if lines[7] != "index,true,assigned":
        raise DataError("noise map missing entry header")
    rows = lines[8:8 + count]
    if len(rows) != count:
        raise DataError(f"noise map declares {count} entries but holds {len(rows)}")
    entries = np.array(
        [[int(f) for f in row.split(",")] for row in rows], dtype=np.int64
    ).reshape(count, 3)
    return NoiseMap(
        seed=int(header["seed"]),
        p=float(header["p"]),
        n=int(header["n"]),
        class_count=int(header["classes"]),
        entries=entries,
        convention=header["convention"],
    )


def noise_map_digest(path) -> str:
    """Content hash of a stored noise map, recorded in every sweep row."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
