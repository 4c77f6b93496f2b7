"""0-1 robust loss estimation for a feature subset.

The loss of a mask is natural error plus Gaussian error, each measured on
a classifier freshly trained on the masked feature set. Evaluators wrap
this behind a small interface so the selection environment can be driven
by stubbed deterministic losses in tests.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import EmptySelectionError
from .nn import MlpModel, TrainConfig, mlp_init, model_hash, predict, train


@dataclass(frozen=True)
class FeatureMask:
    """Selection bit-vector plus the permanently eliminated feature set."""

    selected: tuple[int, ...]  # sorted feature indices
    n_features: int
    eliminated: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if set(self.selected) & self.eliminated:
            raise ValueError("a feature cannot be both selected and eliminated")
        if self.selected and (min(self.selected) < 0 or max(self.selected) >= self.n_features):
            raise ValueError("selected index out of range")

    @classmethod
    def empty(cls, n_features: int) -> "FeatureMask":
        return cls(selected=(), n_features=n_features)

    @classmethod
    def from_indices(cls, indices, n_features: int) -> "FeatureMask":
        return cls(selected=tuple(sorted(int(i) for i in indices)), n_features=n_features)

    def with_feature(self, j: int) -> "FeatureMask":
        return FeatureMask(
            selected=tuple(sorted(self.selected + (int(j),))),
            n_features=self.n_features,
            eliminated=self.eliminated,
        )

    def with_eliminated(self, j: int) -> "FeatureMask":
        return FeatureMask(
            selected=self.selected,
            n_features=self.n_features,
            eliminated=self.eliminated | {int(j)},
        )

    @property
    def popcount(self) -> int:
        return len(self.selected)

    def indices(self) -> np.ndarray:
        return np.asarray(self.selected, dtype=int)

    def bits(self) -> list[int]:
        out = [0] * self.n_features
        for j in self.selected:
            out[j] = 1
        return out

    def apply(self, features: np.ndarray) -> np.ndarray:
        if not self.selected:
            raise EmptySelectionError("mask selects no features")
        return np.asarray(features)[:, self.indices()]


@dataclass
class RobustLossReport:
    natural_error: float
    gaussian_error: float
    combined: float
    n_corrupted_used: int
    model_hash: str = ""


def natural_error(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    x = np.atleast_2d(x)
    if x.shape[0] == 0:
        raise ValueError("natural error of an empty split is undefined")
    return float(np.mean(predict(model, x) != np.asarray(y)))


def gaussian_error(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    sigma: float,
    l_per_sample: int,
    seed: int,
    cap_factor: int = 10,
) -> tuple[float, int]:
    """Harmful-corruption rate over correctly classified samples.

    RNG contract (what a brute-force oracle must replicate): one generator
    seeded with `seed`; samples visited in split order; a sample the model
    misclassifies consumes no randomness; a correctly classified sample
    draws `cap_factor * l_per_sample` standard-normal rows at once. Draws
    count from the first up to the one where the l_per_sample-th
    misclassified (harmful) draw appears, or all of them when fewer
    harmful draws exist. Returns (harmful count / draws counted, draws
    counted); 0 when no sample is correctly classified.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if l_per_sample < 1:
        raise ValueError(f"l_per_sample must be >= 1, got {l_per_sample}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int)
    if x.shape[0] == 0:
        raise ValueError("gaussian error of an empty split is undefined")
    cap = cap_factor * l_per_sample
    rng = np.random.default_rng(seed)
    correct = predict(model, x) == y
    harmful_total = 0
    drawn_total = 0
    for i in np.flatnonzero(correct):
        noise = rng.standard_normal((cap, x.shape[1]))
        corrupted = np.clip(x[i][None] + sigma * noise, 0.0, 1.0)
        harmful = predict(model, corrupted) != y[i]
        cum = np.cumsum(harmful)
        if cum[-1] >= l_per_sample:
            stop = int(np.argmax(cum == l_per_sample)) + 1
            harmful_total += l_per_sample
        else:
            stop = cap
            harmful_total += int(cum[-1])
        drawn_total += stop
    if drawn_total == 0:
        return 0.0, 0
    return harmful_total / drawn_total, drawn_total


@dataclass
class EvalConfig:
    """Everything evaluate_mask needs besides the mask itself."""

    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    hidden: int = 300
    sigma: float = 0.1
    l_per_sample: int = 10
    lambda_nat: float = 1.0
    lambda_gauss: float = 1.0
    repeats: int = 1
    seed: int = 0


def evaluate_mask(mask: FeatureMask, dataset: Dataset, cfg: EvalConfig) -> RobustLossReport:
    """Train `repeats` fresh models on rl_train restricted to the mask and
    average natural + Gaussian error measured on rl_val.

    Repeat r uses seed cfg.seed + r for init, shuffling, and corruption,
    so a repeats=2 report is exactly the mean of the two repeats=1 reports
    with those seeds.
    """
    if mask.popcount < 1:
        raise EmptySelectionError("cannot evaluate an empty feature mask")
    x_train, y_train = dataset.split("rl_train")
    x_val, y_val = dataset.split("rl_val")
    x_train = mask.apply(x_train)
    x_val = mask.apply(x_val)
    k = dataset.num_classes
    nats, gausses, used = [], [], 0
    hashes = []
    for r in range(cfg.repeats):
        seed_r = cfg.seed + r
        model = mlp_init(mask.popcount, cfg.hidden, k, seed=seed_r)
        tcfg = TrainConfig(
            learning_rate=cfg.train_cfg.learning_rate,
            epochs=cfg.train_cfg.epochs,
            batch_size=cfg.train_cfg.batch_size,
            optimizer=cfg.train_cfg.optimizer,
            seed=seed_r,
        )
        model, _ = train(model, x_train, y_train, tcfg)
        nats.append(natural_error(model, x_val, y_val))
        g, n = gaussian_error(model, x_val, y_val, cfg.sigma, cfg.l_per_sample, seed=seed_r)
        gausses.append(g)
        used += n
        hashes.append(model_hash(model))
    nat = float(np.mean(nats))
    gauss = float(np.mean(gausses))
    return RobustLossReport(
        natural_error=nat,
        gaussian_error=gauss,
        combined=cfg.lambda_nat * nat + cfg.lambda_gauss * gauss,
        n_corrupted_used=used,
        model_hash="+".join(hashes),
    )


class MaskEvaluator:
    """Interface the selection environment drives."""

    n_features: int

    def evaluate(self, mask: FeatureMask) -> RobustLossReport:
        raise NotImplementedError

    def baseline_report(self) -> RobustLossReport:
        """Loss convention for the empty mask (no trainable model)."""
        raise NotImplementedError


class DatasetEvaluator(MaskEvaluator):
    """Real evaluator over a dataset; memoizes reports per mask bits (the
    computation is deterministic) and optionally appends a JSONL run log
    with wall times."""

    def __init__(self, dataset: Dataset, cfg: EvalConfig, log_path: str | None = None):
        self.dataset = dataset
        self.cfg = cfg
        self.n_features = dataset.n_features
        self.log_path = log_path
        self._cache: dict[tuple[int, ...], RobustLossReport] = {}
        self.cache_hits = 0
        self.n_evaluations = 0

    def evaluate(self, mask: FeatureMask) -> RobustLossReport:
        key = mask.selected
        if key in self._cache:
            self.cache_hits += 1
            return self._cache[key]
        started = time.perf_counter()
        report = evaluate_mask(mask, self.dataset, self.cfg)
        self.n_evaluations += 1
        self._cache[key] = report
        if self.log_path:
            with open(self.log_path, "a") as fh:
                fh.write(
                    json.dumps(
                        {
                            "mask": mask.bits(),
                            "natural": report.natural_error,
                            "gaussian": report.gaussian_error,
                            "combined": report.combined,
                            "seed": self.cfg.seed,
                            "wall_time": time.perf_counter() - started,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        return report

    def baseline_report(self) -> RobustLossReport:
        """Majority-class predictor: natural error = 1 - max class share,
        Gaussian error 0 (a constant predictor never flips)."""
        _, y_val = self.dataset.split("rl_val")
        counts = np.bincount(y_val)
        nat = 1.0 - counts.max() / counts.sum()
        return RobustLossReport(
            natural_error=float(nat),
            gaussian_error=0.0,
            combined=self.cfg.lambda_nat * float(nat),
            n_corrupted_used=0,
            model_hash="majority",
        )


class TabularEvaluator(MaskEvaluator):
    """Stub evaluator mapping mask bits to fixed loss terms.

    `table` maps frozenset of selected indices -> combined loss, or ->
    (natural, gaussian) pairs. Used for enumerable toy MDPs.
    """

    def __init__(self, table: dict, n_features: int, baseline: float = 0.5):
        self.table = table
        self.n_features = n_features
        self.baseline = baseline

    def _report(self, value) -> RobustLossReport:
        if isinstance(value, tuple):
            nat, gauss = value
        else:
            nat, gauss = float(value), 0.0
        return RobustLossReport(
            natural_error=nat,
            gaussian_error=gauss,
            combined=nat + gauss,
            n_corrupted_used=0,
            model_hash="stub",
        )

    def evaluate(self, mask: FeatureMask) -> RobustLossReport:
        if mask.popcount < 1:
            raise EmptySelectionError("cannot evaluate an empty feature mask")
        key = frozenset(mask.selected)
        if key not in self.table:
            raise KeyError(f"stub table has no entry for mask {sorted(key)}")
        return self._report(self.table[key])

    def baseline_report(self) -> RobustLossReport:
        return self._report(self.baseline)
