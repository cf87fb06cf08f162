"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
files), 3 numeric failure (training divergence or unfinished sweep jobs).
Diagnostics go to stderr; machine-readable output goes to files, except for
single scalar probe results which print to stdout.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tarfile
import tempfile
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from ._version import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import (
    DataError,
    apply_noise_map,
    inject_label_noise,
    load_cifar10,
    load_mnist,
    load_noise_map,
    save_noise_map,
    subsample,
)
from .nn.train import DivergenceError, TrainConfig, train, write_history_csv
from .probes.features import export_features_csv, extract_features, save_features
from .probes.knn import KpUndefinedError, compute_kp
from .probes.tsne import sample_for_tsne, tsne, write_embedding_csv
from .report import render_curves, render_tsne
from .sweep import SweepConfig, run_sweep
from .zoo import ModelSpec, build

DATA_DIR_ENV = "DDLAB_DATA_DIR"

MNIST_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
)
MNIST_ARCHIVES = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
CIFAR_MD5 = "c32a1d4ab5d03f1284b67883e8d87530"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_data_dir() -> str:
    return os.environ.get(DATA_DIR_ENV, "data")


def _load_split(dataset, data_dir, split, dtype=np.float64):
    loader = {"mnist": load_mnist, "cifar10": load_cifar10}[dataset]
    return loader(data_dir, split, dtype=dtype)


def _prepare_train_set(args, dtype=np.float64):
    ds = _load_split(args.dataset, args.dir, "train", dtype)
    if args.n is not None:
        ds = subsample(ds, args.n, args.data_seed)
    if getattr(args, "noise_map", None):
        ds = apply_noise_map(ds, load_noise_map(args.noise_map))
    return ds


def _add_data_args(parser, with_noise_map=True):
    parser.add_argument("--dataset", choices=("mnist", "cifar10"), required=True)
    parser.add_argument("--dir", default=_default_data_dir(),
                        help=f"data directory (default ${DATA_DIR_ENV} or ./data)")
    parser.add_argument("--n", type=int, default=None, help="subsample the train split to N")
    parser.add_argument("--data-seed", type=int, default=0, help="seed for the subsample draw")
    if with_noise_map:
        parser.add_argument("--noise-map", default=None, help="stored noise map to apply")


def build_parser() -> _Parser:
    parser = _Parser(prog="ddlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ddlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch-data", help="download or verify the dataset archives")
    p.add_argument("--dataset", choices=("mnist", "cifar10"), required=True)
    p.add_argument("--dir", default=_default_data_dir())

    p = sub.add_parser("inject-noise", help="subsample, inject label noise, store the map")
    _add_data_args(p, with_noise_map=False)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--seed", type=int, default=0, help="seed for the noise draw")
    p.add_argument("--out", required=True, help="noise map output path")

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    _add_data_args(p)
    p.add_argument("--family", choices=("simplefc", "cnn5", "resnet18"), required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr-schedule", choices=("simplefc", "cnn"), default=None)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--no-batchnorm", action="store_true",
                   help="CNN5 only: drop the per-stage batch norm")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--history", default=None, help="per-epoch metrics CSV")

    p = sub.add_parser("sweep", help="run a width sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true",
                   help="skip completed jobs (always on; flag kept for explicitness)")

    p = sub.add_parser("probe", help="inspect a trained checkpoint")
    probe_sub = p.add_subparsers(dest="probe_command", required=True)

    q = probe_sub.add_parser("kp", help="noisy-label recovery score of the feature space")
    _add_data_args(q)
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--k", type=int, default=5)
    q.add_argument("--mode", choices=("in_sample", "out_of_sample"), default="in_sample")

    q = probe_sub.add_parser("features", help="dump penultimate features")
    _add_data_args(q)
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--split", choices=("train", "test"), default="train")
    q.add_argument("--out", required=True)
    q.add_argument("--csv", default=None, help="also export rows as CSV")

    q = probe_sub.add_parser("tsne", help="embed sampled training features in 2-D")
    _add_data_args(q)
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--sample", type=int, default=1000)
    q.add_argument("--perplexity", type=float, default=30.0)
    q.add_argument("--iterations", type=int, default=1000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True, help="embedding CSV output path")

    p = sub.add_parser("report", help="render figures from result files")
    report_sub = p.add_subparsers(dest="report_command", required=True)

    q = report_sub.add_parser("curves", help="metric-vs-width curves from a sweep CSV")
    q.add_argument("--in", dest="infile", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--kind", choices=("error", "loss", "kp"), default="error")
    q.add_argument("--linear-x", action="store_true", help="linear width axis (default log)")

    q = report_sub.add_parser("tsne", help="embedding scatter from an embedding CSV")
    q.add_argument("--in", dest="infile", required=True)
    q.add_argument("--out", required=True)

    return parser


def _md5(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _download(url: str, dest: Path) -> None:
    print(f"fetching {url}", file=sys.stderr)
    with urllib.request.urlopen(url, timeout=60) as resp, open(dest, "wb") as out:
        while True:
            chunk = resp.read(1 << 20)
            if not chunk:
                break
            out.write(chunk)


def _fetch_mnist(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, md5 in MNIST_ARCHIVES.items():
        dest = directory / name
        if dest.exists():
            if _md5(dest) != md5:
                raise DataError(f"{dest}: checksum mismatch, delete and refetch")
            print(f"verified {name}", file=sys.stderr)
            continue
        last_error = None
        for base in MNIST_MIRRORS:
            try:
                _download(base + name, dest)
                break
            except (urllib.error.URLError, OSError) as exc:
                last_error = exc
        else:
            raise DataError(f"could not download {name}: {last_error}")
        if _md5(dest) != md5:
            raise DataError(f"{dest}: checksum mismatch after download")


def _fetch_cifar10(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    batches = directory / "cifar-10-batches-bin"
    expected = [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]
    if all((batches / name).exists() for name in expected):
        print("verified cifar-10-batches-bin", file=sys.stderr)
        return
    archive = directory / "cifar-10-binary.tar.gz"
    if not archive.exists():
        try:
            _download(CIFAR_URL, archive)
        except (urllib.error.URLError, OSError) as exc:
            raise DataError(f"could not download CIFAR-10: {exc}") from exc
    if _md5(archive) != CIFAR_MD5:
        raise DataError(f"{archive}: checksum mismatch")
    with tarfile.open(archive, "r:gz") as tar:
        for member in tar.getmembers():
            if member.isfile() and member.name.endswith(".bin"):
                member.name = Path(member.name).name
                tar.extract(member, batches)


def _cmd_fetch_data(args) -> int:
    if args.dataset == "mnist":
        _fetch_mnist(Path(args.dir))
    else:
        _fetch_cifar10(Path(args.dir))
    return 0


def _cmd_inject_noise(args) -> int:
    if not 0.0 <= args.p <= 1.0:
        raise UsageError(f"--p must lie in [0, 1], got {args.p}")
    ds = _load_split(args.dataset, args.dir, "train")
    if args.n is not None:
        ds = subsample(ds, args.n, args.data_seed)
    _, nm = inject_label_noise(ds, args.p, args.seed)
    save_noise_map(nm, args.out)
    print(f"wrote {args.out} ({nm.entries.shape[0]} flipped of {nm.n})", file=sys.stderr)
    return 0


_FAMILY_NAMES = {"simplefc": "SimpleFC", "cnn5": "CNN5", "resnet18": "ResNet18"}


def _cmd_train(args) -> int:
    dtype = np.dtype(args.dtype)
    train_ds = _prepare_train_set(args, dtype)
    test_ds = _load_split(args.dataset, args.dir, "test", dtype)
    family = _FAMILY_NAMES[args.family]
    spec = ModelSpec(family=family, width_k=args.width,
                     input_shape=train_ds.images.shape[1:])
    kwargs = {"batchnorm": False} if (args.no_batchnorm and family == "CNN5") else {}
    model = build(spec, seed=args.seed, dtype=dtype, **kwargs)
    schedule = args.lr_schedule or ("simplefc" if family == "SimpleFC" else "cnn")
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr_schedule=schedule,
                      initial_lr=args.lr, momentum=args.momentum, seed=args.seed)
    model, history = train(model, train_ds, test_ds, cfg)
    save_checkpoint(model, args.out, train_seed=args.seed)
    if args.history:
        write_history_csv(history, args.history)
    print(f"final train error {history.train_error[-1]:.4f}, "
          f"test error {history.test_error:.4f}", file=sys.stderr)
    return 0


def _cmd_sweep(args) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        raise DataError(f"missing config file {config_path}")
    try:
        cfg = SweepConfig.from_json(config_path)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"{config_path}: invalid sweep config: {exc}") from exc
    records = run_sweep(cfg, workers=args.workers)
    expected = len(cfg.widths) * cfg.replicates
    if len(records) != expected:
        print(f"{expected - len(records)} of {expected} jobs failed; "
              f"see {Path(cfg.out_dir) / 'records'} for markers", file=sys.stderr)
        return 3
    print(f"wrote {Path(cfg.out_dir) / 'results.csv'} ({len(records)} rows)", file=sys.stderr)
    return 0


def _cmd_probe(args) -> int:
    model, header = load_checkpoint(args.checkpoint)
    train_ds = _prepare_train_set(args, model.dtype)
    if args.probe_command == "kp":
        test_ds = None
        if args.mode == "out_of_sample":
            test_ds = _load_split(args.dataset, args.dir, "test", model.dtype)
        report = compute_kp(model, train_ds, k=args.k, mode=args.mode, test_ds=test_ds)
        print(repr(report.kp))
        return 0
    if args.probe_command == "features":
        ds = train_ds if args.split == "train" else \
            _load_split(args.dataset, args.dir, "test", model.dtype)
        fm = extract_features(model, ds)
        save_features(fm, args.out, model_tag=f"{header['family']}_k{header['width_k']}")
        if args.csv:
            export_features_csv(fm, args.csv)
        return 0
    # tsne
    idx = sample_for_tsne(train_ds, n=args.sample, seed=args.seed)
    feats = extract_features(model, train_ds)
    embedding = tsne(feats.rows[idx], perplexity=args.perplexity,
                     iterations=args.iterations, seed=args.seed)
    write_embedding_csv(args.out, idx, embedding, train_ds.true_labels[idx],
                        train_ds.assigned_labels[idx], train_ds.noise_mask[idx])
    return 0


def _cmd_report(args) -> int:
    if not Path(args.infile).exists():
        raise DataError(f"missing input file {args.infile}")
    if args.report_command == "curves":
        render_curves(args.infile, args.out, kind=args.kind, x_log=not args.linear_x)
    else:
        render_tsne(args.infile, args.out)
    return 0


_COMMANDS = {
    "fetch-data": _cmd_fetch_data,
    "inject-noise": _cmd_inject_noise,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "probe": _cmd_probe,
    "report": _cmd_report,
}


def cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, KpUndefinedError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    return cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
