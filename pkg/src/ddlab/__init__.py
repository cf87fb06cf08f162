"""ddlab: a width-sweep laboratory for double descent under label noise.

Train width-parameterized model families from scratch on MNIST/CIFAR-10 with
injected label noise, sweep widths with replicates, and probe the learned
feature space with a k-nearest-neighbor noisy-label recovery score and t-SNE
embeddings.
"""

from ._version import __version__
from .datasets import (
    DataError,
    LabeledDataset,
    NoiseMap,
    apply_noise_map,
    inject_label_noise,
    load_cifar10,
    load_mnist,
    load_noise_map,
    noise_map_digest,
    save_noise_map,
    subsample,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import (
    DivergenceError,
    Model,
    TrainConfig,
    TrainHistory,
    cross_entropy,
    evaluate,
    lr_at,
    sgd_step,
    softmax,
    train,
)
from .probes import (
    FeatureMatrix,
    KpReport,
    KpUndefinedError,
    compute_kp,
    extract_features,
    knn_predict,
    sample_for_tsne,
    tsne,
)
from .sweep import (
    AggregateRow,
    SweepConfig,
    SweepRecord,
    aggregate,
    detect_interpolation_threshold,
    locate_test_error_peak,
    run_sweep,
)
from .zoo import (
    ModelSpec,
    build,
    build_cnn5,
    build_resnet18,
    build_simplefc,
    count_params,
)

__all__ = [
    "__version__",
    "DataError", "LabeledDataset", "NoiseMap", "apply_noise_map",
    "inject_label_noise", "load_cifar10", "load_mnist", "load_noise_map",
    "noise_map_digest", "save_noise_map", "subsample",
    "load_checkpoint", "save_checkpoint",
    "DivergenceError", "Model", "TrainConfig", "TrainHistory", "cross_entropy",
    "evaluate", "lr_at", "sgd_step", "softmax", "train",
    "FeatureMatrix", "KpReport", "KpUndefinedError", "compute_kp",
    "extract_features", "knn_predict", "sample_for_tsne", "tsne",
    "AggregateRow", "SweepConfig", "SweepRecord", "aggregate",
    "detect_interpolation_threshold", "locate_test_error_peak", "run_sweep",
    "ModelSpec", "build", "build_cnn5", "build_resnet18", "build_simplefc",
    "count_params",
]
