"""Width-sweep orchestration: train a model per (width, replicate), probe it,
and persist one result row per job.

Jobs are independent and idempotent. Each finished job writes its record to
records/<family>_k<width>_r<rep>.json via write-to-temporary-then-rename, so
an interrupted sweep resumes by skipping every record already on disk. A
failed job leaves a .failed.json marker (retried on the next run) and never
poisons its siblings. Label noise is drawn exactly once per sweep from the
data seed and shared by all widths and replicates; its file digest is stamped
into every row.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import multiprocessing
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .datasets import (
    LabeledDataset,
    inject_label_noise,
    load_cifar10,
    load_mnist,
    load_noise_map,
    noise_map_digest,
    save_noise_map,
    subsample,
)
from .nn.train import TrainConfig, train
from .probes.knn import compute_kp
from .zoo import ModelSpec, build, count_params

CSV_COLUMNS = (
    "family", "width_k", "param_count", "p", "replicate", "seed",
    "train_loss", "train_error", "test_loss", "test_error",
    "kp_in_sample", "kp_out_of_sample", "epochs", "wall_clock_seconds",
    "noise_map_digest",
)

_LOADERS = {"mnist": load_mnist, "cifar10": load_cifar10}


@dataclass
class TrainTemplate:
    epochs: int
    batch_size: int = 128
    lr_schedule: str | None = None  # None picks the family default
    initial_lr: float = 0.05
    momentum: float = 0.0
    shuffle_per_epoch: bool = True


@dataclass
class KpSettings:
    neighbors: int = 5
    modes: list = field(default_factory=lambda: ["in_sample"])


@dataclass
class SweepConfig:
    family: str
    widths: list
    p: float
    dataset: str
    data_dir: str
    out_dir: str
    train: TrainTemplate
    subsample_n: int | None = None
    test_subsample_n: int | None = None
    replicates: int = 3
    kp: KpSettings = field(default_factory=KpSettings)
    base_seed: int = 0
    data_seed: int = 0
    deterministic: bool = True
    dtype: str = "float64"
    input_shape: tuple = ()

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if list(self.widths) != sorted(set(self.widths)):
            raise ValueError("widths must be strictly increasing")
        if self.dataset not in _LOADERS:
            raise ValueError(f"dataset must be one of {tuple(_LOADERS)}, got {self.dataset!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"noise ratio p must lie in [0, 1], got {self.p}")

    @property
    def lr_schedule(self) -> str:
        if self.train.lr_schedule is not None:
            return self.train.lr_schedule
        return "simplefc" if self.family == "SimpleFC" else "cnn"

    def spec(self, width: int) -> ModelSpec:
        shape = self.input_shape or ((1, 28, 28) if self.dataset == "mnist" else (3, 32, 32))
        return ModelSpec(family=self.family, width_k=width, input_shape=tuple(shape))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        d["train"] = TrainTemplate(**d["train"])
        if "kp" in d:
            d["kp"] = KpSettings(**d["kp"])
        d["input_shape"] = tuple(d.get("input_shape", ()))
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SweepRecord:
    family: str
    width_k: int
    param_count: int
    p: float
    replicate: int
    seed: int
    train_loss: float
    train_error: float
    test_loss: float
    test_error: float
    kp_in_sample: float | None
    kp_out_of_sample: float | None
    epochs: int
    wall_clock_seconds: float
    noise_map_digest: str

    def csv_row(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)
        return ",".join(fmt(getattr(self, c)) for c in CSV_COLUMNS)


def job_seed(base_seed: int, width: int, replicate: int, role: str) -> int:
    """Stable per-job seed; adding widths never perturbs existing jobs."""
    digest = hashlib.sha256(f"{base_seed}:{width}:{replicate}:{role}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _np_dtype(name: str):
    if name not in ("float32", "float64"):
        raise ValueError(f"dtype must be float32 or float64, got {name!r}")
    return np.dtype(name)


def prepare_data(cfg: SweepConfig) -> tuple[LabeledDataset, LabeledDataset, str]:
    """Load, subsample, and noise-inject the sweep's shared datasets.

    Returns (noisy train set, test set, noise map digest). The noise map file
    is written once into the output directory; a resumed sweep re-derives the
    identical map and verifies the digest matches.
    """
    loader = _LOADERS[cfg.dataset]
    dtype = _np_dtype(cfg.dtype)
    train_ds = loader(cfg.data_dir, "train", dtype=dtype)
    test_ds = loader(cfg.data_dir, "test", dtype=dtype)
    if cfg.subsample_n is not None:
        train_ds = subsample(train_ds, cfg.subsample_n, job_seed(cfg.data_seed, 0, 0, "subsample"))
    if cfg.test_subsample_n is not None:
        test_ds = subsample(test_ds, cfg.test_subsample_n,
                            job_seed(cfg.data_seed, 0, 0, "test-subsample"))
    digest = ""
    if cfg.p > 0:
        train_ds, nm = inject_label_noise(train_ds, cfg.p, cfg.data_seed)
        map_path = Path(cfg.out_dir) / "noise_map.txt"
        if map_path.exists():
            stored = load_noise_map(map_path)
            if not np.array_equal(stored.entries, nm.entries):
                raise ValueError(
                    f"{map_path} holds a different noise draw than this config produces; "
                    "refusing to mix results"
                )
        else:
            save_noise_map(nm, map_path)
        digest = noise_map_digest(map_path)
    return train_ds, test_ds, digest


def run_job(cfg: SweepConfig, train_ds: LabeledDataset, test_ds: LabeledDataset,
            width: int, replicate: int, digest: str) -> SweepRecord:
    spec = cfg.spec(width)
    init_seed = job_seed(cfg.base_seed, width, replicate, "init")
    shuffle_seed = job_seed(cfg.base_seed, width, replicate, "shuffle")
    model = build(spec, seed=init_seed, dtype=_np_dtype(cfg.dtype))
    tcfg = TrainConfig(
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        lr_schedule=cfg.lr_schedule,
        initial_lr=cfg.train.initial_lr,
        momentum=cfg.train.momentum,
        seed=shuffle_seed,
        shuffle_per_epoch=cfg.train.shuffle_per_epoch,
    )
    tick = time.perf_counter()
    model, history = train(model, train_ds, test_ds, tcfg)
    kp_in = kp_out = None
    if cfg.p > 0:
        if "in_sample" in cfg.kp.modes:
            kp_in = compute_kp(model, train_ds, k=cfg.kp.neighbors, mode="in_sample").kp
        if "out_of_sample" in cfg.kp.modes:
            kp_out = compute_kp(model, train_ds, k=cfg.kp.neighbors,
                                mode="out_of_sample", test_ds=test_ds).kp
    wall = 0.0 if cfg.deterministic else time.perf_counter() - tick
    return SweepRecord(
        family=cfg.family,
        width_k=width,
        param_count=count_params(spec),
        p=cfg.p,
        replicate=replicate,
        seed=init_seed,
        train_loss=history.train_loss[-1],
        train_error=history.train_error[-1],
        test_loss=history.test_loss,
        test_error=history.test_error,
        kp_in_sample=kp_in,
        kp_out_of_sample=kp_out,
        epochs=cfg.train.epochs,
        wall_clock_seconds=wall,
        noise_map_digest=digest,
    )


def _record_path(records_dir: Path, cfg: SweepConfig, width: int, replicate: int) -> Path:
    return records_dir / f"{cfg.family}_k{width}_r{replicate}.json"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="ascii")
    os.replace(tmp, path)


# Shared by forked pool workers; populated in the parent before the fork so
# the (large) datasets are inherited instead of pickled per job.
_POOL_CONTEXT: dict = {}


def _pool_job(args):
    width, replicate = args
    ctx = _POOL_CONTEXT
    return run_job(ctx["cfg"], ctx["train_ds"], ctx["test_ds"], width, replicate, ctx["digest"])


def run_sweep(cfg: SweepConfig, workers: int = 1) -> list:
    """Run every (width, replicate) job, resuming past completed records."""
    out_dir = Path(cfg.out_dir)
    records_dir = out_dir / "records"
    records_dir.mkdir(parents=True, exist_ok=True)

    train_ds, test_ds, digest = prepare_data(cfg)

    pending = []
    records: dict[tuple, SweepRecord] = {}
    for width in cfg.widths:
        for rep in range(cfg.replicates):
            path = _record_path(records_dir, cfg, width, rep)
            if path.exists():
                records[(width, rep)] = SweepRecord(**json.loads(path.read_text()))
            else:
                pending.append((width, rep))

    def finish(width, rep, record):
        records[(width, rep)] = record
        payload = json.dumps(asdict(record), sort_keys=True, indent=1)
        _atomic_write(_record_path(records_dir, cfg, width, rep), payload)
        marker = _failure_path(records_dir, cfg, width, rep)
        if marker.exists():
            marker.unlink()

    def fail(width, rep, exc):
        payload = json.dumps(
            {"width_k": width, "replicate": rep, "error": f"{type(exc).__name__}: {exc}"},
            sort_keys=True, indent=1,
        )
        _atomic_write(_failure_path(records_dir, cfg, width, rep), payload)

    if workers > 1 and pending:
        _POOL_CONTEXT.update(cfg=cfg, train_ds=train_ds, test_ds=test_ds, digest=digest)
        try:
            ctx = multiprocessing.get_context("fork")
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers,
                                                        mp_context=ctx) as pool:
                futures = {pool.submit(_pool_job, job): job for job in pending}
                for fut in concurrent.futures.as_completed(futures):
                    width, rep = futures[fut]
                    try:
                        finish(width, rep, fut.result())
                    except Exception as exc:  # noqa: BLE001 - failure marker, then continue
                        fail(width, rep, exc)
        finally:
            _POOL_CONTEXT.clear()
    else:
        for width, rep in pending:
            try:
                finish(width, rep, run_job(cfg, train_ds, test_ds, width, rep, digest))
            except Exception as exc:  # noqa: BLE001
                fail(width, rep, exc)

    ordered = [records[key] for key in sorted(records)]
    write_records_csv(ordered, out_dir / "results.csv")
    manifest = {
        "config": cfg.to_dict(),
        "noise_map_digest": digest,
        "code_version": __version__,
        "record_count": len(ordered),
        "peak_search_window": [0.5, 4.0],
    }
    _atomic_write(out_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=1))
    return ordered


def _failure_path(records_dir: Path, cfg: SweepConfig, width: int, replicate: int) -> Path:
    return records_dir / f"{cfg.family}_k{width}_r{replicate}.failed.json"


def write_records_csv(records, path) -> None:
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(r.csv_row() for r in records)
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def read_records_csv(path) -> list:
    text = Path(path).read_text(encoding="ascii")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != ",".join(CSV_COLUMNS):
        raise ValueError(f"{path}: unknown results schema")
    records = []
    for line in lines[1:]:
        fields = dict(zip(CSV_COLUMNS, line.split(",")))
        records.append(SweepRecord(
            family=fields["family"],
            width_k=int(fields["width_k"]),
            param_count=int(fields["param_count"]),
            p=float(fields["p"]),
            replicate=int(fields["replicate"]),
            seed=int(fields["seed"]),
            train_loss=float(fields["train_loss"]),
            train_error=float(fields["train_error"]),
            test_loss=float(fields["test_loss"]),
            test_error=float(fields["test_error"]),
            kp_in_sample=float(fields["kp_in_sample"]) if fields["kp_in_sample"] else None,
            kp_out_of_sample=(float(fields["kp_out_of_sample"])
                              if fields["kp_out_of_sample"] else None),
            epochs=int(fields["epochs"]),
            wall_clock_seconds=float(fields["wall_clock_seconds"]),
            noise_map_digest=fields["noise_map_digest"],
        ))
    return records


_AGG_METRICS = ("train_loss", "train_error", "test_loss", "test_error",
                "kp_in_sample", "kp_out_of_sample")


@dataclass
class AggregateRow:
    width_k: int
    param_count: int
    replicates: int
    mean: dict
    std: dict


def aggregate(records) -> list:
    """Per-width mean and sample standard deviation over replicates."""
    if not records:
        raise ValueError("cannot aggregate zero records")
    families = {r.family for r in records}
    ps = {r.p for r in records}
    if len(families) > 1 or len(ps) > 1:
        raise ValueError(f"records mix families {families} or noise ratios {ps}")
    by_width: dict[int, list] = {}
    for r in records:
        by_width.setdefault(r.width_k, []).append(r)
    out = []
    for width in sorted(by_width):
        group = by_width[width]
        mean, std = {}, {}
        for metric in _AGG_METRICS:
            values = [getattr(r, metric) for r in group if getattr(r, metric) is not None]
            if not values:
                mean[metric] = std[metric] = None
                continue
            arr = np.array(values, dtype=np.float64)
            mean[metric] = float(arr.mean())
            std[metric] = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out.append(AggregateRow(width_k=width, param_count=group[0].param_count,
                                replicates=len(group), mean=mean, std=std))
    return out


def detect_interpolation_threshold(widths, mean_train_errors, epsilon: float = 0.005):
    """Smallest width whose mean train error is <= epsilon, or None."""
    widths = list(widths)
    if widths != sorted(widths):
        raise ValueError("widths must be sorted ascending")
    for width, err in zip(widths, mean_train_errors):
        if err <= epsilon:
            return width
    return None


def locate_test_error_peak(widths, mean_test_errors, threshold_width,
                           window: tuple = (0.5, 4.0)):
    """Width and value of the maximal mean test error near the threshold.

    The search window is [threshold * window[0], threshold * window[1]].
    Returns None when the window is empty, or when the maximum sits at the
    window's smallest width with the curve monotone decreasing across the
    window (no interior peak).
    """
    if threshold_width is None:
        return None
    lo = threshold_width * window[0]
    hi = threshold_width * window[1]
    inside = [(w, e) for w, e in zip(widths, mean_test_errors) if lo <= w <= hi]
    if not inside:
        return None
    errors = [e for _, e in inside]
    best = int(np.argmax(errors))
    decreasing = all(a >= b for a, b in zip(errors, errors[1:]))
    if best == 0 and decreasing:
        return None
    return inside[best]
