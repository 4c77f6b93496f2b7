"""End-to-end evaluation: accuracy tables over benign and precomputed
adversarial test sets, the attribution-ranked perturbation-removal
curves, and single-metric top-k sweeps."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, AdversarialSet, transfer_pair_attack
from .data import Dataset, dataset_hash
from .errors import DataError
from .nn import MlpModel, TrainConfig, accuracy, mlp_init, predict, train
from .robust_loss import FeatureMask
from .scoring import integrated_gradients

log = logging.getLogger(__name__)


@dataclass
class AttackSuite:
    """Benign test samples plus the precomputed transferable attack sets."""

    x_clean: np.ndarray
    y: np.ndarray
    adv: dict[str, np.ndarray]  # attack kind -> perturbed features
    provenance: dict = field(default_factory=dict)


def prepare_attack_suite(
    dataset: Dataset,
    eps: float,
    twin_seed: int,
    train_cfg: TrainConfig,
    hidden: int = 300,
    pgd_iters: int = 20,
    attack_seed: int = 0,
    split: str = "test",
    cache_dir: str | None = None,
) -> AttackSuite:
    """Generate (or load from cache) the FGSM and PGD transferable test
    sets for one epsilon. The cache key covers the dataset, epsilon, and
    every seed involved."""
    key_src = json.dumps(
        {
            "dataset": dataset_hash(dataset),
            "eps": eps,
            "twin_seed": twin_seed,
            "attack_seed": attack_seed,
            "hidden": hidden,
            "pgd_iters": pgd_iters,
            "split": split,
            "train": [train_cfg.learning_rate, train_cfg.epochs, train_cfg.batch_size, train_cfg.optimizer],
        },
        sort_keys=True,
    )
    key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
    if cache_dir:
        cache_path = os.path.join(cache_dir, f"advsuite_{key}.npz")
        if os.path.exists(cache_path):
            log.info("attack cache hit: %s", cache_path)
            blob = np.load(cache_path, allow_pickle=True)
            return AttackSuite(
                x_clean=blob["x_clean"],
                y=blob["y"],
                adv={"fgsm": blob["fgsm"], "pgd": blob["pgd"]},
                provenance=json.loads(str(blob["provenance"])),
            )
    sets: dict[str, AdversarialSet] = {}
    for kind in ("fgsm", "pgd"):
        cfg = AttackConfig(kind=kind, eps=eps, pgd_iters=pgd_iters, seed=attack_seed)
        sets[kind], _ = transfer_pair_attack(
            dataset, cfg, twin_seed=twin_seed, train_cfg=train_cfg, hidden=hidden, split=split
        )
    prov = {
        "eps": eps,
        "twin_seed": twin_seed,
        "attack_seed": attack_seed,
        "split": split,
        "key": key,
        "fgsm": sets["fgsm"].provenance,
        "pgd": sets["pgd"].provenance,
    }
    suite = AttackSuite(
        x_clean=sets["pgd"].x_clean,
        y=sets["pgd"].y,
        adv={kind: s.x_adv for kind, s in sets.items()},
        provenance=prov,
    )
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        np.savez(
            cache_path,
            x_clean=suite.x_clean,
            y=suite.y,
            fgsm=suite.adv["fgsm"],
            pgd=suite.adv["pgd"],
            provenance=json.dumps(prov, sort_keys=True),
        )
        log.info("attack cache write: %s", cache_path)
    return suite


@dataclass
class EvalRow:
    method: str
    mask_size: int
    eps: float
    benign_acc: float
    benign_std: float
    fgsm_acc: float
    fgsm_std: float
    pgd_acc: float
    pgd_std: float

    @property
    def avg_acc(self) -> float:
        return (self.benign_acc + self.pgd_acc) / 2.0

    @property
    def tradeoff_ratio(self) -> float:
        return self.benign_acc / self.pgd_acc if self.pgd_acc > 0 else float("inf")

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "mask_size": self.mask_size,
            "eps": self.eps,
            "benign_acc": self.benign_acc,
            "benign_std": self.benign_std,
            "fgsm_acc": self.fgsm_acc,
            "fgsm_std": self.fgsm_std,
            "pgd_acc": self.pgd_acc,
            "pgd_std": self.pgd_std,
            "avg_acc": self.avg_acc,
            "tradeoff_ratio": self.tradeoff_ratio,
        }


def evaluate_features(
    mask: FeatureMask,
    dataset: Dataset,
    suite: AttackSuite,
    train_cfg: TrainConfig,
    hidden: int = 300,
    repeats: int = 3,
    seed: int = 0,
    method: str = "mask",
) -> EvalRow:
    """Train `repeats` fresh models on the masked standard train split;
    report mean and std of benign / FGSM / PGD test accuracy."""
    if mask.popcount < 1:
        raise DataError("cannot evaluate an empty mask")
    x_train, y_train = dataset.split("train")
    x_train = mask.apply(x_train)
    x_test = mask.apply(suite.x_clean)
    x_fgsm = mask.apply(suite.adv["fgsm"])
    x_pgd = mask.apply(suite.adv["pgd"])
    benign, fg, pg = [], [], []
    for r in range(repeats):
        seed_r = seed + r
        model = mlp_init(mask.popcount, hidden, dataset.num_classes, seed=seed_r)
        cfg = TrainConfig(
            learning_rate=train_cfg.learning_rate,
            epochs=train_cfg.epochs,
            batch_size=train_cfg.batch_size,
            optimizer=train_cfg.optimizer,
            seed=seed_r,
        )
        model, _ = train(model, x_train, y_train, cfg)
        benign.append(accuracy(model, x_test, suite.y))
        fg.append(accuracy(model, x_fgsm, suite.y))
        pg.append(accuracy(model, x_pgd, suite.y))
    return EvalRow(
        method=method,
        mask_size=mask.popcount,
        eps=float(suite.provenance.get("eps", 0.0)),
        benign_acc=float(np.mean(benign)),
        benign_std=float(np.std(benign)),
        fgsm_acc=float(np.mean(fg)),
        fgsm_std=float(np.std(fg)),
        pgd_acc=float(np.mean(pg)),
        pgd_std=float(np.std(pg)),
    )


def filter_adversarial_pairs(
    model: MlpModel, x_clean: np.ndarray, x_adv: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep pairs where the model is right on the clean sample and wrong
    on the adversarial one (the removal-curve precondition)."""
    pred_clean = predict(model, x_clean)
    pred_adv = predict(model, x_adv)
    keep = (pred_clean == y) & (pred_adv != y)
    return x_clean[keep], x_adv[keep], np.asarray(y)[keep]


REMOVAL_MODES = ("highest", "random", "lowest")


def ig_removal_curve(
    model: MlpModel,
    x_clean: np.ndarray,
    x_adv: np.ndarray,
    y: np.ndarray,
    mode: str,
    k_grid: list[int],
    seed: int = 0,
    ig_steps: int = 50,
    per_sample: bool = True,
) -> list[dict]:
    """Replace the perturbation on k features of each adversarial example
    with the clean values, k features chosen by attribution rank.

    The rank score of feature j is its attribution along the adversarial
    -> clean path (how much restoring it recovers the true-class
    probability). mode "highest" removes the most attribution-laden
    features first, "lowest" the least, "random" ignores attribution.
    Each returned row carries the benign / same-wrong-label /
    new-wrong-label proportions, which sum to 1.
    """
    if mode not in REMOVAL_MODES:
        raise ValueError(f"mode must be one of {REMOVAL_MODES}, got {mode!r}")
    x_clean = np.atleast_2d(x_clean)
    x_adv = np.atleast_2d(x_adv)
    y = np.asarray(y, dtype=int)
    n, m = x_clean.shape
    if n == 0:
        raise DataError("no adversarial pairs to analyze")
    orig_wrong = predict(model, x_adv)
    rng = np.random.default_rng(seed)
    if mode == "random":
        ranks = np.vstack([rng.permutation(m) for _ in range(n)])
    else:
        restore = np.vstack(
            [
                integrated_gradients(model, x_clean[i], x_adv[i], int(y[i]), ig_steps)
                for i in range(n)
            ]
        )
        if not per_sample:
            restore = np.tile(restore.mean(axis=0), (n, 1))
        ranks = np.argsort(-restore if mode == "highest" else restore, axis=1, kind="stable")
    rows = []
    for k in k_grid:
        k = int(min(k, m))
        x_patched = x_adv.copy()
        if k > 0:
            rows_idx = np.repeat(np.arange(n), k)
            cols_idx = ranks[:, :k].ravel()
            x_patched[rows_idx, cols_idx] = x_clean[rows_idx, cols_idx]
        pred = predict(model, x_patched)
        benign = pred == y
        same_wrong = (~benign) & (pred == orig_wrong)
        new_wrong = (~benign) & (pred != orig_wrong)
        rows.append(
            {
                "k": k,
                "benign": float(benign.mean()),
                "same_wrong": float(same_wrong.mean()),
                "new_wrong": float(new_wrong.mean()),
            }
        )
    return rows


def metric_sweep(
    dataset: Dataset,
    metric: str,
    scores: np.ndarray | None,
    k_grid: list[int],
    suite: AttackSuite,
    train_cfg: TrainConfig,
    hidden: int = 300,
    attack_kind: str = "pgd",
    seed: int = 0,
) -> list[dict]:
    """Top-k selection curve for one metric: train / test / robust
    accuracy as k grows. metric "random" ignores `scores`."""
    from .baselines import random_select, topk_metric_select

    x_train_all, y_train = dataset.split("train")
    rows = []
    for k in k_grid:
        if metric == "random":
            result = random_select(dataset.n_features, int(k), seed=seed)
        else:
            if scores is None:
                raise ValueError("scores are required for non-random sweeps")
            result = topk_metric_select(scores, int(k), metric=metric)
        mask = result.mask
        model = mlp_init(mask.popcount, hidden, dataset.num_classes, seed=seed)
        cfg = TrainConfig(
            learning_rate=train_cfg.learning_rate,
            epochs=train_cfg.epochs,
            batch_size=train_cfg.batch_size,
            optimizer=train_cfg.optimizer,
            seed=seed,
        )
        model, _ = train(model, mask.apply(x_train_all), y_train, cfg)
        rows.append(
            {
                "k": int(k),
                "train_acc": accuracy(model, mask.apply(x_train_all), y_train),
                "test_acc": accuracy(model, mask.apply(suite.x_clean), suite.y),
                "robust_acc": accuracy(model, mask.apply(suite.adv[attack_kind]), suite.y),
            }
        )
    return rows
