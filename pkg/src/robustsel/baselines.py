"""Comparison selectors: L1 logistic (proximal gradient), top-k by a
single metric, and uniform random selection. All emit masks the robust
loss evaluator and harness consume unchanged."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .robust_loss import FeatureMask


@dataclass
class BaselineResult:
    mask: FeatureMask
    method: str
    hyper: dict = field(default_factory=dict)
    score_trace: list[float] | None = None


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logistic_objective(w, b, x, y_onehot, lam):
    p = _softmax_rows(x @ w + b)
    n = x.shape[0]
    nll = -np.sum(y_onehot * np.log(p + 1e-12)) / n
    return nll + lam * np.abs(w).sum()


def _spectral_norm_sq(x: np.ndarray, iters: int = 30) -> float:
    """Largest singular value squared, by power iteration on X^T X."""
    v = np.ones(x.shape[1]) / np.sqrt(x.shape[1])
    for _ in range(iters):
        v = x.T @ (x @ v)
        norm = np.linalg.norm(v)
        if norm == 0:
            return 1.0
        v /= norm
    return float(np.linalg.norm(x.T @ (x @ v)))


def lasso_select(
    dataset: Dataset,
    lam: float,
    k: int,
    max_iter: int = 500,
    split: str = "train",
    standardize: bool = True,
) -> BaselineResult:
    """Top-k features by max |weight| of an L1-penalized multinomial
    logistic model fit with proximal gradient (soft-thresholding).

    Features are z-scored before fitting (the usual L1 convention; the
    penalty is not scale-invariant), so low-variance but informative
    columns compete on equal footing. The 1/L step size makes the
    penalized objective non-increasing per iteration. When fewer than k
    weights are nonzero, the remainder is padded by the gradient magnitude
    of the smooth loss at the solution; if every weight is zero the
    ranking degenerates to index order. Both situations are flagged in
    `hyper`.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    x, y = dataset.split(split) if dataset.splits else (dataset.features, dataset.labels)
    n, m = x.shape
    if k < 1 or k > m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    if standardize:
        std = x.std(axis=0)
        x = (x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)
    n_classes = dataset.num_classes
    y_onehot = np.zeros((n, n_classes))
    y_onehot[np.arange(n), y] = 1.0
    # softmax CE Hessian w.r.t. logits is bounded by I/2
    lipschitz = _spectral_norm_sq(x) / (2.0 * n)
    step = 1.0 / max(lipschitz, 1e-12)
    w = np.zeros((m, n_classes))
    b = np.zeros(n_classes)
    trace = [_logistic_objective(w, b, x, y_onehot, lam)]
    for _ in range(max_iter):
        p = _softmax_rows(x @ w + b)
        err = (p - y_onehot) / n
        gw = x.T @ err
        gb = err.sum(axis=0)
        w_new = w - step * gw
        w_new = np.sign(w_new) * np.maximum(np.abs(w_new) - step * lam, 0.0)
        b = b - step * gb
        w = w_new
        trace.append(_logistic_objective(w, b, x, y_onehot, lam))
    strength = np.abs(w).max(axis=1)
    n_nonzero = int(np.count_nonzero(strength))
    hyper: dict = {"lambda": lam, "k": k, "max_iter": max_iter}
    if n_nonzero == 0:
        order = np.arange(m)
        hyper["degenerate"] = True
    else:
        order = np.lexsort((np.arange(m), -strength))
        if n_nonzero < k:
            # pad zero-weight features by gradient magnitude of the smooth loss
            p = _softmax_rows(x @ w + b)
            grad_mag = np.abs(x.T @ ((p - y_onehot) / n)).max(axis=1)
            kept = [j for j in order if strength[j] > 0]
            zeros = [j for j in np.lexsort((np.arange(m), -grad_mag)) if strength[j] == 0]
            order = np.array(kept + zeros)
            hyper["padded"] = True
    mask = FeatureMask.from_indices(order[:k], m)
    return BaselineResult(mask=mask, method="lasso", hyper=hyper, score_trace=[float(v) for v in trace])


def topk_metric_select(scores: np.ndarray, k: int, metric: str = "metric") -> BaselineResult:
    """k highest-score indices, ties broken by ascending index."""
    scores = np.asarray(scores, dtype=float)
    m = len(scores)
    if k > m:
        raise ValueError(f"k={k} exceeds the number of features {m}")
    order = np.lexsort((np.arange(m), -scores))
    mask = FeatureMask.from_indices(order[:k], m)
    return BaselineResult(mask=mask, method=f"topk:{metric}", hyper={"k": k})


def random_select(n_features: int, k: int, seed: int) -> BaselineResult:
    if k > n_features:
        raise ValueError(f"k={k} exceeds the number of features {n_features}")
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(n_features)[:k]
    mask = FeatureMask.from_indices(chosen, n_features)
    return BaselineResult(mask=mask, method="random", hyper={"k": k, "seed": seed})
