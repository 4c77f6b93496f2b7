"""Feature scoring: three performance metrics, an attribution-based
robustness score, their combinations, and the six priority queues that
define the agent's action space.

Metric columns are min-max normalized to [0, 1] with higher = better
(more predictive, or more robust). A constant column normalizes to 0.5.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DataError
from .nn import MlpModel, input_gradient

METRICS = ("mi", "tree", "f", "mi_ig", "tree_ig", "f_ig")


def normalize_minmax(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi - lo < 1e-12:
        return np.full(values.shape, 0.5)
    return (values - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# performance metrics


def mutual_info_bits(features: np.ndarray, labels: np.ndarray, bins: int = 32) -> np.ndarray:
    """Plug-in mutual information (bits) between each equal-width-binned
    feature and the label."""
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.asarray(labels)
    n, m = features.shape
    if n == 0:
        raise DataError("cannot score an empty dataset")
    classes, y = np.unique(labels, return_inverse=True)
    k = len(classes)
    out = np.zeros(m)
    for j in range(m):
        col = features[:, j]
        lo, hi = col.min(), col.max()
        if hi <= lo:
            continue  # constant feature carries no information
        b = np.minimum((bins * (col - lo) / (hi - lo)).astype(int), bins - 1)
        joint = np.zeros((bins, k))
        np.add.at(joint, (b, y), 1.0)
        joint /= n
        px = joint.sum(axis=1, keepdims=True)
        py = joint.sum(axis=0, keepdims=True)
        mask = joint > 0
        out[j] = float(np.sum(joint[mask] * np.log2(joint[mask] / (px @ py)[mask])))
    return out


def f_statistic(features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """One-way ANOVA F per feature.

    Classes with fewer than two samples force a pooled-variance
    denominator; constant features score 0 without producing NaN.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.asarray(labels)
    n, m = features.shape
    classes = np.unique(labels)
    k = len(classes)
    if k < 2:
        raise DataError("F statistic needs at least two classes")
    counts = np.array([np.sum(labels == c) for c in classes], dtype=float)
    grand = features.mean(axis=0)
    means = np.vstack([features[labels == c].mean(axis=0) for c in classes])
    between = (counts[:, None] * (means - grand) ** 2).sum(axis=0) / (k - 1)
    if counts.min() < 2:
        within = features.var(axis=0, ddof=1)
    else:
        sse = np.zeros(m)
        for c, mean_c in zip(classes, means):
            sse += ((features[labels == c] - mean_c) ** 2).sum(axis=0)
        within = sse / (n - k)
    out = np.zeros(m)
    ok = within > 0
    out[ok] = between[ok] / within[ok]
    # zero within-class variance with separated means: dominate everything
    out[(~ok) & (between > 0)] = np.max(out[ok], initial=1.0) * 10.0
    return np.abs(out)


# ---------------------------------------------------------------------------
# extremely randomized trees


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 10
    min_leaf: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _grow_tree(
    x: np.ndarray,
    y: np.ndarray,
    k: int,
    cfg: ForestConfig,
    rng: np.random.Generator,
    importances: np.ndarray,
) -> None:
    """Extra-trees split rule: at each node draw one uniform threshold per
    candidate feature, keep the best Gini decrease. Accumulates weighted
    impurity decreases into `importances`."""
    n_total = len(y)
    m = x.shape[1]
    n_candidates = max(1, int(np.ceil(np.sqrt(m))))
    stack = [(np.arange(n_total), 0)]
    while stack:
        idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=k).astype(float)
        node_gini = _gini(counts)
        if (
            node_gini == 0.0
            or depth >= cfg.max_depth
            or len(idx) < 2 * cfg.min_leaf
        ):
            continue
        feats = rng.choice(m, size=min(n_candidates, m), replace=False)
        best = None
        for j in feats:
            col = x[idx, j]
            lo, hi = col.min(), col.max()
            if hi <= lo:
                continue
            thr = rng.uniform(lo, hi)
            left = col <= thr
            nl = int(left.sum())
            if nl < cfg.min_leaf or len(idx) - nl < cfg.min_leaf:
                continue
            cl = np.bincount(y[idx[left]], minlength=k).astype(float)
            cr = counts - cl
            decrease = node_gini - (nl * _gini(cl) + (len(idx) - nl) * _gini(cr)) / len(idx)
            if best is None or decrease > best[0]:
                best = (decrease, j, left)
        if best is None:
            continue
        decrease, j, left = best
        importances[j] += (len(idx) / n_total) * decrease
        stack.append((idx[left], depth + 1))
        stack.append((idx[~left], depth + 1))


def tree_importance_scores(features: np.ndarray, labels: np.ndarray, cfg: ForestConfig | None = None) -> np.ndarray:
    """Mean Gini-importance over an extremely randomized tree ensemble,
    normalized to sum to 1 (all zeros if no tree found a split)."""
    cfg = cfg or ForestConfig()
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=int)
    if x.shape[0] == 0:
        raise DataError("cannot score an empty dataset")
    k = int(y.max()) + 1
    rng = np.random.default_rng(cfg.seed)
    total = np.zeros(x.shape[1])
    n_used = 0
    for _ in range(cfg.n_trees):
        imp = np.zeros(x.shape[1])
        _grow_tree(x, y, k, cfg, rng, imp)
        s = imp.sum()
        if s > 0:
            total += imp / s
            n_used += 1
    if n_used == 0:
        return total
    total /= n_used
    return total / total.sum()


# ---------------------------------------------------------------------------
# integrated gradients and the robustness score


def integrated_gradients(
    model: MlpModel,
    x: np.ndarray,
    baseline: np.ndarray,
    y: int,
    steps: int = 50,
) -> np.ndarray:
    """Midpoint-Riemann path attribution of the class-y probability:
    (x - baseline) * mean over the path of d p_y / d input."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = np.asarray(x, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    if x.shape != baseline.shape:
        raise ValueError(f"input shape {x.shape} != baseline shape {baseline.shape}")
    alphas = (np.arange(steps) + 0.5) / steps
    points = baseline[None, :] + alphas[:, None] * (x - baseline)[None, :]
    grads = input_gradient(model, points, int(y), mode="prob")
    return (x - baseline) * grads.mean(axis=0)


def integrated_gradients_batch(
    model: MlpModel, xs: np.ndarray, baselines: np.ndarray, ys: np.ndarray, steps: int = 50
) -> np.ndarray:
    """Per-sample IG for paired (input, baseline) rows; returns (N, M)."""
    xs = np.atleast_2d(xs)
    baselines = np.atleast_2d(baselines)
    ys = np.atleast_1d(ys)
    return np.vstack(
        [integrated_gradients(model, xs[i], baselines[i], int(ys[i]), steps) for i in range(len(ys))]
    )


def robust_score_vector(
    model: MlpModel,
    x_clean: np.ndarray,
    x_adv: np.ndarray,
    y: np.ndarray,
    steps: int = 50,
) -> np.ndarray:
    """Robustness score per feature from attack pairs.

    Mean absolute per-feature attribution along each clean -> adversarial
    path, min-max normalized and subtracted from 1, so features whose
    perturbation carries the attack score low and untouched features score
    high.
    """
    x_clean = np.atleast_2d(x_clean)
    if x_clean.shape[0] == 0:
        raise DataError("robust score needs at least one attack pair")
    ig = integrated_gradients_batch(model, x_adv, x_clean, y, steps)
    raw = np.abs(ig).mean(axis=0)
    return 1.0 - normalize_minmax(raw)


def combined_scores(perf: np.ndarray, robust: np.ndarray) -> np.ndarray:
    perf = np.asarray(perf, dtype=float)
    robust = np.asarray(robust, dtype=float)
    if perf.shape != robust.shape:
        raise ValueError(f"score length mismatch: {perf.shape} vs {robust.shape}")
    return (perf + robust) / 2.0


# ---------------------------------------------------------------------------
# score table and queues


@dataclass
class ScoreTable:
    feature_names: list[str]
    columns: dict[str, np.ndarray]  # metric -> normalized scores, len M

    def __post_init__(self) -> None:
        missing = [m for m in METRICS if m not in self.columns]
        if missing:
            raise ValueError(f"score table missing metrics: {missing}")
        for name, col in self.columns.items():
            if np.isnan(col).any():
                raise ValueError(f"metric {name!r} contains NaN")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


@dataclass
class ScoringConfig:
    bins: int = 32
    forest: ForestConfig | None = None
    ig_steps: int = 50


def compute_score_table(
    dataset: Dataset,
    model: MlpModel,
    x_clean: np.ndarray,
    x_adv: np.ndarray,
    y_attack: np.ndarray,
    cfg: ScoringConfig | None = None,
    split: str = "train",
) -> ScoreTable:
    """Assemble all six normalized metric columns.

    The attribution is computed once from the full-feature model and the
    supplied attack pairs; downstream selection reuses it unchanged.
    """
    cfg = cfg or ScoringConfig()
    x, y = dataset.split(split) if dataset.splits else (dataset.features, dataset.labels)
    mi = normalize_minmax(mutual_info_bits(x, y, cfg.bins))
    tree = normalize_minmax(tree_importance_scores(x, y, cfg.forest))
    f = normalize_minmax(f_statistic(x, y))
    robust = robust_score_vector(model, x_clean, x_adv, y_attack, cfg.ig_steps)
    return ScoreTable(
        feature_names=list(dataset.feature_names),
        columns={
            "mi": mi,
            "tree": tree,
            "f": f,
            "mi_ig": combined_scores(mi, robust),
            "tree_ig": combined_scores(tree, robust),
            "f_ig": combined_scores(f, robust),
        },
    )


def save_score_table(table: ScoreTable, path: str, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["feature"] + list(METRICS))
        for i, name in enumerate(table.feature_names):
            writer.writerow([name] + ["%.17g" % table.columns[m][i] for m in METRICS])


def load_score_table(path: str) -> ScoreTable:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header = rows[0]
    if header[0] != "feature" or tuple(header[1:]) != METRICS:
        raise DataError(f"{path}: not a score table (header {header})")
    names = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return ScoreTable(names, {m: values[:, i] for i, m in enumerate(METRICS)})


class FeatureQueues:
    """Six priority queues over feature indices, ordered by descending
    score with ascending-index tie break.

    A popped (selected) feature leaves every queue; an eliminated feature
    does too, and is additionally remembered so masks can exclude it.
    """

    def __init__(self, scores: dict[str, np.ndarray], eliminated: set[int] | None = None):
        self.scores = {m: np.asarray(scores[m], dtype=float) for m in METRICS}
        m_count = len(next(iter(self.scores.values())))
        self.n_features = m_count
        self.eliminated: set[int] = set(eliminated or ())
        self._removed: set[int] = set(self.eliminated)
        self.orders = {
            m: [int(j) for j in np.lexsort((np.arange(m_count), -self.scores[m]))]
            for m in METRICS
        }
        self._cursor = {m: 0 for m in METRICS}

    def copy(self) -> "FeatureQueues":
        """Exact clone, selections and eliminations included."""
        clone = FeatureQueues(self.scores, eliminated=self.eliminated)
        clone._removed = set(self._removed)
        clone._cursor = dict(self._cursor)
        return clone

    def reset_copy(self) -> "FeatureQueues":
        """Fresh queues for a new episode: eliminations persist, selections do not."""
        return FeatureQueues(self.scores, eliminated=self.eliminated)

    def head(self, action: int) -> int | None:
        metric = METRICS[action]
        order = self.orders[metric]
        i = self._cursor[metric]
        while i < len(order) and order[i] in self._removed:
            i += 1
        self._cursor[metric] = i
        return order[i] if i < len(order) else None

    def head_scores(self) -> np.ndarray:
        out = np.zeros(len(METRICS))
        for a, metric in enumerate(METRICS):
            j = self.head(a)
            if j is not None:
                out[a] = self.scores[metric][j]
        return out

    def pop(self, action: int) -> int:
        j = self.head(action)
        if j is None:
            raise IndexError(f"queue {METRICS[action]!r} is empty")
        self._removed.add(j)
        return j

    def eliminate(self, feature: int) -> None:
        self.eliminated.add(feature)
        self._removed.add(feature)

    def remaining(self) -> int:
        return self.n_features - len(self._removed)

    def as_lists(self) -> dict[str, list[int]]:
        return {
            m: [j for j in self.orders[m] if j not in self._removed] for m in METRICS
        }


def build_queues(table: ScoreTable, eliminated: set[int] | None = None) -> FeatureQueues:
    return FeatureQueues(table.columns, eliminated=eliminated)
