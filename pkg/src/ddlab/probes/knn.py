"""k-nearest-neighbor label prediction and the noisy-label recovery score.

The recovery score asks: for each training sample whose label was flipped,
do its k nearest clean-labeled neighbors in the learned feature space still
vote for its original (true) label? The score is the matched fraction over
all flagged samples. High values mean the network embeds noisy points among
their true classmates rather than among the class they were relabeled to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix, extract_features


class KpUndefinedError(ValueError):
    """Raised for the in-sample score when the dataset holds no noisy samples."""


@dataclass(frozen=True)
class KpReport:
    kp: float
    k_neighbors: int
    matched_count: int
    noisy_count: int
    mode: str
    metric: str = "euclidean"


def _pairwise_sq_dists(queries: np.ndarray, reference: np.ndarray) -> np.ndarray:
    q = queries.astype(np.float64, copy=False)
    r = reference.astype(np.float64, copy=False)
    d = (
        np.einsum("ij,ij->i", q, q)[:, None]
        + np.einsum("ij,ij->i", r, r)[None, :]
        - 2.0 * (q @ r.T)
    )
    np.maximum(d, 0.0, out=d)
    return d


def _majority_vote(neighbor_labels: np.ndarray) -> int:
    # neighbor labels arrive in ascending distance order; ties between classes
    # go to the class of the nearest neighbor among the tied classes
    counts = np.bincount(neighbor_labels)
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if tied.shape[0] == 1:
        return int(tied[0])
    for label in neighbor_labels:
        if counts[label] == top:
            return int(label)
    raise AssertionError("unreachable: some neighbor must carry a tied label")


def knn_predict(query: FeatureMatrix, reference: FeatureMatrix, reference_labels,
                k: int, chunk: int = 256) -> np.ndarray:
    """Majority label of the k nearest reference rows per query row.

    Euclidean distance; distance ties resolve to the lower reference index
    (stable sort); a query never matches a reference row carrying its own
    sample id from the same split.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if reference.rows.shape[0] == 0:
        raise ValueError("reference set is empty")
    if k > reference.rows.shape[0]:
        raise ValueError(f"k={k} exceeds reference size {reference.rows.shape[0]}")
    if query.dim != reference.dim:
        raise ValueError(f"dimension mismatch: query {query.dim} vs reference {reference.dim}")
    labels = np.asarray(reference_labels)
    if labels.shape[0] != reference.rows.shape[0]:
        raise ValueError("reference_labels length must equal reference size")

    same_split = query.source_split == reference.source_split
    predictions = np.empty(query.rows.shape[0], dtype=np.int64)
    for start in range(0, query.rows.shape[0], chunk):
        stop = min(start + chunk, query.rows.shape[0])
        dists = _pairwise_sq_dists(query.rows[start:stop], reference.rows)
        if same_split:
            exclude = query.sample_ids[start:stop, None] == reference.sample_ids[None, :]
            dists[exclude] = np.inf
        order = np.argsort(dists, axis=1, kind="stable")[:, :k]
        for row, nbrs in enumerate(order):
            if np.isinf(dists[row, nbrs[-1]]):
                raise ValueError("fewer than k admissible neighbors after self-exclusion")
            predictions[start + row] = _majority_vote(labels[nbrs])
    return predictions


def compute_kp(model, noisy_train_ds, k: int = 5, mode: str = "in_sample",
               test_ds=None) -> KpReport:
    """Noisy-label recovery score of a trained model's feature space.

    in_sample: queries are the flagged training samples, the reference is
    the clean remainder labeled by its assigned (= true) labels, and a query
    counts as matched when the vote equals its true label. out_of_sample:
    queries are test samples, matched against the test true labels.
    """
    if mode not in ("in_sample", "out_of_sample"):
        raise ValueError(f"mode must be in_sample or out_of_sample, got {mode!r}")
    train_feats = extract_features(model, noisy_train_ds)
    mask = noisy_train_ds.noise_mask
    clean = FeatureMatrix(rows=train_feats.rows[~mask],
                          sample_ids=train_feats.sample_ids[~mask],
                          source_split=train_feats.source_split)
    clean_labels = noisy_train_ds.assigned_labels[~mask]

    if mode == "in_sample":
        noisy_count = int(mask.sum())
        if noisy_count == 0:
            raise KpUndefinedError("Kp undefined for p=0: no noisy samples to score")
        queries = FeatureMatrix(rows=train_feats.rows[mask],
                                sample_ids=train_feats.sample_ids[mask],
                                source_split=train_feats.source_split)
        targets = noisy_train_ds.true_labels[mask]
    else:
        if test_ds is None:
            raise ValueError("out_of_sample mode needs a test dataset")
        queries = extract_features(model, test_ds)
        targets = test_ds.true_labels
        noisy_count = test_ds.n

    predicted = knn_predict(queries, clean, clean_labels, k)
    matched = int((predicted == targets).sum())
    return KpReport(kp=matched / noisy_count, k_neighbors=k, matched_count=matched,
                    noisy_count=noisy_count, mode=mode)
