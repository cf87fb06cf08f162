"""Exact t-SNE for embedding penultimate features in 2-D.

Protocol: per-point Gaussian bandwidths are fitted by bisection until each
conditional distribution hits the target perplexity (entropy tolerance 1e-5,
at most 50 halvings), affinities are symmetrized and renormalized, and the
embedding is optimized by gradient descent with learning rate 200, adaptive
per-coordinate gains, momentum 0.5 switching to 0.8 at iteration 250, and
early exaggeration (factor 12) on the affinities for the first 250
iterations. Everything is deterministic for a fixed seed, and pairwise input
distances are computed from coordinate differences, so the embedding depends
on the input only through its distance matrix.
"""

from __future__ import annotations

import numpy as np

EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_SWITCH = 250
INITIAL_MOMENTUM = 0.5
FINAL_MOMENTUM = 0.8
LEARNING_RATE = 200.0
ENTROPY_TOL = 1e-5
MAX_BISECT = 50
MIN_GAIN = 0.01
_EPS = 1e-12


def _pairwise_sq_dists(x: np.ndarray, block: int = 64) -> np.ndarray:
    n = x.shape[0]
    d = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = x[start:stop, None, :] - x[None, :, :]
        d[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return d


def _entropy_and_row(dist_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    p = np.exp(-dist_row * beta)
    total = p.sum()
    if total <= 0.0:
        return 0.0, np.zeros_like(p)
    h = np.log(total) + beta * float((dist_row * p).sum()) / total
    return h, p / total

def _fit_conditionals(dists: np.ndarray, perplexity: float) -> np.ndarray:
    n = dists.shape[0]
    target = np.log(perplexity)
    p = np.zeros((n, n), dtype=np.float64)
    others = ~np.eye(n, dtype=bool)
    for i in range(n):
        row = dists[i][others[i]]
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        h, row_p = _entropy_and_row(row, beta)
        for _ in range(MAX_BISECT):
            if abs(h - target) <= ENTROPY_TOL:
                break
            if h > target:
                beta_min = beta
                beta = beta * 2.0 if np.isinf(beta_max) else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if np.isinf(beta_min) else (beta + beta_min) / 2.0
            h, row_p = _entropy_and_row(row, beta)
        p[i][others[i]] = row_p
    return p


def _low_dim_affinities(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sq = np.einsum("ij,ij->i", y, y)
    num = 1.0 / (1.0 + (sq[:, None] + sq[None, :] - 2.0 * (y @ y.T)))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    p_safe = np.maximum(p, _EPS)
    q_safe = np.maximum(q, _EPS)
    return float((p_safe * np.log(p_safe / q_safe)).sum())


def tsne(features, perplexity: float = 30.0, iterations: int = 1000, seed: int = 0,
         return_kl_trace: bool = False):
    """Embed rows of a feature matrix (or raw array) into 2-D.

    Returns the (rows, 2) embedding; with return_kl_trace=True also returns
    the per-iteration KL divergence against the non-exaggerated affinities.
    """
    x = np.asarray(getattr(features, "rows", features), dtype=np.float64)
    n = x.shape[0]
    if perplexity <= 1.0:
        raise ValueError(f"perplexity must exceed 1, got {perplexity}")
    if n < 3 * perplexity:
        raise ValueError(f"{n} rows cannot support perplexity {perplexity} (need >= 3x)")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    cond = _fit_conditionals(_pairwise_sq_dists(x), perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p / p.sum(), _EPS)

    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    trace = []

    for it in range(iterations):
        p_eff = p * EXAGGERATION if it < EXAGGERATION_ITERS else p
        q, num = _low_dim_affinities(y)
        q = np.maximum(q, _EPS)
        weights = (p_eff - q) * num
        grad = 4.0 * (y * weights.sum(axis=1)[:, None] - weights @ y)

        momentum = INITIAL_MOMENTUM if it < MOMENTUM_SWITCH else FINAL_MOMENTUM
        same_sign = (grad > 0) == (velocity > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, MIN_GAIN, out=gains)
        velocity = momentum * velocity - LEARNING_RATE * (gains * grad)
        y = y + velocity
        y = y - y.mean(axis=0)
        if return_kl_trace:
            trace.append(kl_divergence(p, np.maximum(_low_dim_affinities(y)[0], _EPS)))

    return (y, np.array(trace)) if return_kl_trace else y


def sample_for_tsne(ds, n: int = 1000, seed: int = 0) -> np.ndarray:
    """Uniform sample of dataset indices (ascending) for embedding plots."""
    if n > ds.n:
        raise ValueError(f"cannot sample {n} from {ds.n} points")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(ds.n, size=n, replace=False))


def write_embedding_csv(path, sample_ids, embedding, true_labels, assigned_labels,
                        noise_mask) -> None:
    lines = ["sample_id,x,y,true_label,assigned_label,is_noisy"]
    for sid, (ex, ey), t, a, m in zip(sample_ids, embedding, true_labels,
                                      assigned_labels, noise_mask):
        lines.append(f"{int(sid)},{float(ex)!r},{float(ey)!r},{int(t)},{int(a)},{int(m)}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
