from .features import (
    FeatureMatrix,
    export_features_csv,
    extract_features,
    load_features,
    save_features,
)
from .knn import KpReport, KpUndefinedError, compute_kp, knn_predict
from .tsne import kl_divergence, sample_for_tsne, tsne, write_embedding_csv

__all__ = [
    "FeatureMatrix", "export_features_csv", "extract_features", "load_features",
    "save_features", "KpReport", "KpUndefinedError", "compute_kp", "knn_predict",
    "kl_divergence", "sample_for_tsne", "tsne", "write_embedding_csv",
]
