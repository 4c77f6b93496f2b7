"""Dataset ingestion, unit-interval scaling, split allocation, and a
synthetic generator with planted robust / non-robust / noise features.

The synthetic generator is the test oracle for the whole pipeline: feature
roles are known by construction, so selection quality can be judged
against ground truth.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError

RL_SPLITS = ("rl_train", "rl_val", "rl_test")


@dataclass
class Dataset:
    features: np.ndarray  # (N, M), values in [0, 1]
    labels: np.ndarray  # (N,) ints in [0, K)
    feature_names: list[str]
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    scale_min: np.ndarray | None = None
    scale_range: np.ndarray | None = None
    feature_roles: list[str] | None = None  # synthetic ground truth, if any

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.splits:
            raise DataError(f"dataset has no split named {name!r}")
        idx = self.splits[name]
        return self.features[idx], self.labels[idx]


def scale_unit_interval(features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-feature min-max scaling into [0, 1]; constant columns map to 0."""
    features = np.asarray(features, dtype=float)
    mins = features.min(axis=0)
    ranges = features.max(axis=0) - mins
    constant = ranges == 0
    if constant.any():
        warnings.warn(
            f"{int(constant.sum())} constant feature column(s) scaled to all zeros",
            stacklevel=2,
        )
    safe = np.where(constant, 1.0, ranges)
    scaled = (features - mins) / safe
    scaled[:, constant] = 0.0
    return scaled, mins, ranges


def load_csv(path: str, label_column: str) -> Dataset:
    """Read a rectangular header CSV, scale features to [0, 1]."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise DataError(f"{path}: no column named {label_column!r} in header {header}")
    label_idx = header.index(label_column)
    width = len(header)
    values = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} cells, expected {width}")
        try:
            values[i - 2] = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric cell on row {i}: {exc}") from exc
    labels = values[:, label_idx]
    if not np.allclose(labels, np.round(labels)):
        raise DataError(f"{path}: label column {label_column!r} contains non-integer values")
    feat_cols = [j for j in range(width) if j != label_idx]
    scaled, mins, ranges = scale_unit_interval(values[:, feat_cols])
    return Dataset(
        features=scaled,
        labels=labels.astype(int),
        feature_names=[header[j] for j in feat_cols],
        scale_min=mins,
        scale_range=ranges,
    )


def save_csv(features: np.ndarray, labels: np.ndarray, feature_names: list[str], path: str, label_column: str = "label") -> None:
    """Write the dataset CSV schema used for ingestion and adversarial sets."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(feature_names) + [label_column])
        for row, lab in zip(np.asarray(features), np.asarray(labels)):
            writer.writerow(["%.17g" % v for v in row] + [int(lab)])


def _largest_remainder(n: int, fractions: tuple[float, ...]) -> list[int]:
    ideal = [f * n for f in fractions]
    counts = [int(np.floor(v)) for v in ideal]
    leftover = n - sum(counts)
    by_frac = sorted(range(len(fractions)), key=lambda i: (ideal[i] - counts[i], -i), reverse=True)
    for i in by_frac[:leftover]:
        counts[i] += 1
    return counts


def allocate(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    test_fraction: float = 0.0,
) -> Dataset:
    """Populate {train, rl_train, rl_val, rl_test, test} splits.

    The held-out test split is carved first (stratified by label) and never
    intersects the RL splits; `fractions` then partition the remaining
    training indices into rl_train / rl_val / rl_test, also stratified.
    Deterministic per seed.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"rl fractions must sum to 1, got {fractions}")
    if not 0.0 <= test_fraction < 1.0:
        raise DataError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    per_split: dict[str, list[np.ndarray]] = {name: [] for name in ("test",) + RL_SPLITS}
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_test = _largest_remainder(len(idx), (test_fraction, 1.0 - test_fraction))[0]
        per_split["test"].append(idx[:n_test])
        rest = idx[n_test:]
        counts = _largest_remainder(len(rest), tuple(fractions))
        offset = 0
        for name, cnt in zip(RL_SPLITS, counts):
            per_split[name].append(rest[offset : offset + cnt])
            offset += cnt
    splits = {name: np.sort(np.concatenate(parts)) for name, parts in per_split.items()}
    splits["train"] = np.sort(np.concatenate([splits[name] for name in RL_SPLITS]))
    for name in RL_SPLITS:
        if len(splits[name]) == 0:
            raise DataError(f"split {name!r} would be empty with fractions {fractions}")
    if test_fraction > 0 and len(splits["test"]) == 0:
        raise DataError(f"test split would be empty with test_fraction {test_fraction}")
    return replace(dataset, splits=splits)


@dataclass
class SyntheticSpec:
    """Planted-role generator: robust features separate the classes by a
    margin that survives any l-inf perturbation up to eps_plant, non-robust
    features separate by a margin that eps_plant can flip, noise features
    are label-independent.

    Margins are distances from the 0.5 midpoint to each class mean. The
    noise_* values are class-conditional noise standard deviations as a
    fraction of the role's margin. On a flip_fraction of samples the whole
    robust block coherently points the wrong way; those samples are only
    fixable through the non-robust features, which is what makes a model
    trained on all features lean on them (and makes it attackable), the
    way fragile-but-predictive features behave in real data.
    """

    n_robust: int = 10
    n_nonrobust: int = 10
    n_noise: int = 30
    margin_robust: float = 0.3
    margin_nonrobust: float = 0.05
    eps_plant: float = 0.1
    samples: int = 1000
    seed: int = 0
    noise_robust: float = 0.5
    noise_nonrobust: float = 0.25
    flip_fraction: float = 0.04

    def __post_init__(self) -> None:
        if not self.margin_robust > self.eps_plant > self.margin_nonrobust > 0:
            raise DataError(
                "need margin_robust > eps_plant > margin_nonrobust > 0, got "
                f"{self.margin_robust} / {self.eps_plant} / {self.margin_nonrobust}"
            )
        if min(self.n_robust, self.n_nonrobust, self.n_noise) < 0:
            raise DataError("feature counts must be non-negative")
        if self.n_robust + self.n_nonrobust + self.n_noise < 1:
            raise DataError("need at least one feature")
        if self.samples < 2:
            raise DataError("need at least two samples")
        if not 0.0 <= self.flip_fraction < 0.5:
            raise DataError(f"flip_fraction must lie in [0, 0.5), got {self.flip_fraction}")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Binary-label dataset with known feature roles (see SyntheticSpec)."""
    rng = np.random.default_rng(spec.seed)
    n = spec.samples
    labels = rng.integers(0, 2, size=n)
    signs = 2.0 * labels - 1.0
    flipped = rng.random(n) < spec.flip_fraction
    robust_signs = np.where(flipped, -signs, signs)
    blocks = []
    names: list[str] = []
    roles: list[str] = []
    for count, margin, scale, sign_vec, role in (
        (spec.n_robust, spec.margin_robust, spec.noise_robust, robust_signs, "robust"),
        (spec.n_nonrobust, spec.margin_nonrobust, spec.noise_nonrobust, signs, "nonrobust"),
    ):
        if count:
            noise = rng.normal(0.0, margin * scale, size=(n, count))
            blocks.append(0.5 + sign_vec[:, None] * margin + noise)
            names += [f"{role}_{j}" for j in range(count)]
            roles += [role] * count
    if spec.n_noise:
        blocks.append(rng.uniform(0.0, 1.0, size=(n, spec.n_noise)))
        names += [f"noise_{j}" for j in range(spec.n_noise)]
        roles += ["noise"] * spec.n_noise
    features = np.clip(np.hstack(blocks), 0.0, 1.0)
    return Dataset(
        features=features,
        labels=labels.astype(int),
        feature_names=names,
        feature_roles=roles,
    )


def dataset_hash(dataset: Dataset) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.features, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(dataset.labels, dtype=np.int64).tobytes())
    for name in sorted(dataset.splits):
        h.update(name.encode())
        h.update(np.ascontiguousarray(dataset.splits[name], dtype=np.int64).tobytes())
    return h.hexdigest()[:12]


def to_manifest(dataset: Dataset) -> dict:
    """JSON-ready description: split indices, scaling parameters, roles."""
    manifest: dict = {
        "n_samples": dataset.n_samples,
        "n_features": dataset.n_features,
        "num_classes": dataset.num_classes,
        "feature_names": dataset.feature_names,
        "splits": {k: v.tolist() for k, v in dataset.splits.items()},
        "hash": dataset_hash(dataset),
    }
    if dataset.scale_min is not None:
        manifest["scale_min"] = dataset.scale_min.tolist()
        manifest["scale_range"] = dataset.scale_range.tolist()
    if dataset.feature_roles is not None:
        manifest["feature_roles"] = dataset.feature_roles
    return manifest
