"""Adversarial and corrupted example generation.

FGSM and PGD operate in the l-inf ball intersected with the [0, 1] box,
exactly. The transferable protocol trains an independent twin model on the
same data and attacks with it, so the examples are model-agnostic when
evaluated on the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import CalibrationError
from .nn import MlpModel, TrainConfig, accuracy, input_gradient, mlp_init, model_hash, predict, train


@dataclass
class AttackConfig:
    kind: str = "pgd"  # "fgsm" | "pgd"
    eps: float = 8.0 / 255.0
    pgd_alpha: float | None = None  # defaults to eps / 4
    pgd_iters: int = 20
    random_start: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("fgsm", "pgd"):
            raise ValueError(f"attack kind must be 'fgsm' or 'pgd', got {self.kind!r}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.pgd_alpha is not None and self.pgd_alpha <= 0:
            raise ValueError(f"pgd_alpha must be > 0, got {self.pgd_alpha}")
        if self.pgd_iters < 1:
            raise ValueError(f"pgd_iters must be >= 1, got {self.pgd_iters}")

    @property
    def alpha(self) -> float:
        return self.pgd_alpha if self.pgd_alpha is not None else self.eps / 4.0


def project_exact(adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    """Projection onto B(x, eps) intersected with [0, 1] whose OUTPUT
    satisfies both constraints under float re-measurement.

    Plain clipping can leave |adv - x| one ulp above eps because
    (x + eps) - x rounds up; violating coordinates are nudged toward x.
    """
    adv = np.clip(adv, 0.0, 1.0)
    adv = x + np.clip(adv - x, -eps, eps)
    adv = np.clip(adv, 0.0, 1.0)
    over = np.abs(adv - x) > eps
    while over.any():
        adv = np.where(over, np.nextafter(adv, x), adv)
        over = np.abs(adv - x) > eps
    return adv


def fgsm(model: MlpModel, x: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    """One l-inf ascent step on the loss: clip(x + eps * sign(grad), 0, 1)."""
    x = np.asarray(x, dtype=float)
    grad = input_gradient(model, x, y, mode="loss")
    return project_exact(x + eps * np.sign(grad), x, eps)


def pgd(model: MlpModel, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Iterated sign-gradient ascent, projected each step onto
    B(x, eps) intersected with [0, 1]."""
    x0 = np.asarray(x, dtype=float)
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        adv = np.clip(x0 + rng.uniform(-cfg.eps, cfg.eps, size=x0.shape), 0.0, 1.0)
    else:
        adv = x0.copy()
    for _ in range(cfg.pgd_iters):
        grad = input_gradient(model, adv, y, mode="loss")
        adv = adv + cfg.alpha * np.sign(grad)
        adv = np.clip(adv, x0 - cfg.eps, x0 + cfg.eps)
        adv = np.clip(adv, 0.0, 1.0)
    return project_exact(adv, x0, cfg.eps)


def run_attack(model: MlpModel, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.kind == "fgsm":
        return fgsm(model, x, y, cfg.eps)
    return pgd(model, x, y, cfg)


def gaussian_corrupt(x: np.ndarray, sigma: float, count: int, seed: int) -> np.ndarray:
    """`count` i.i.d. Gaussian-noised copies of one vector, clipped to [0, 1]."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((count,) + x.shape)
    return np.clip(x[None] + sigma * noise, 0.0, 1.0)


def _corrupted_error(
    model: MlpModel, x: np.ndarray, y: np.ndarray, sigma: float, noise: np.ndarray
) -> float:
    """Error rate on x + sigma * noise (common random numbers across sigmas)."""
    draws = noise.shape[0]
    corrupted = np.clip(x[None] + sigma * noise, 0.0, 1.0)
    flat = corrupted.reshape(-1, x.shape[1])
    wrong = predict(model, flat) != np.tile(y, draws)
    return float(wrong.mean())


def calibrate_sigma(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    mu: float,
    tol: float = 0.02,
    max_iter: int = 40,
    seed: int = 0,
    draws_per_sample: int = 4,
    sigma_cap: float = 8.0,
) -> float:
    """Bisect for the global sigma whose corrupted-set error rate hits mu.

    Uses one fixed noise draw across all sigmas so the error curve is a
    deterministic, effectively monotone function of sigma. Raises
    CalibrationError with the achievable (low, high) band when mu cannot
    be reached.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int)
    k = int(model.num_classes)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((draws_per_sample, x.shape[0], x.shape[1]))
    err0 = _corrupted_error(model, x, y, 0.0, noise)
    if mu >= 1.0 - 1.0 / k:
        raise CalibrationError(
            f"target error {mu} is at or above the noise ceiling {1.0 - 1.0 / k:.3f}",
            (err0, 1.0 - 1.0 / k),
        )
    if mu <= err0 + tol:
        if mu < err0 - tol:
            raise CalibrationError(
                f"target error {mu} is below the clean error rate {err0:.3f}", (err0, 1.0 - 1.0 / k)
            )
        return 0.0
    hi = 0.25
    while _corrupted_error(model, x, y, hi, noise) < mu and hi < sigma_cap:
        hi *= 2.0
    err_hi = _corrupted_error(model, x, y, hi, noise)
    if err_hi < mu - tol:
        raise CalibrationError(
            f"target error {mu} unreachable; sigma {hi} only reaches {err_hi:.3f}",
            (err0, err_hi),
        )
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        err = _corrupted_error(model, x, y, mid, noise)
        if abs(err - mu) <= tol:
            return mid
        if err < mu:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class AdversarialSet:
    """Attack output paired with its clean origin and provenance."""

    x_clean: np.ndarray
    x_adv: np.ndarray
    y: np.ndarray
    provenance: dict = field(default_factory=dict)


def transfer_pair_attack(
    dataset: Dataset,
    attack_cfg: AttackConfig,
    twin_seed: int,
    train_cfg: TrainConfig,
    hidden: int = 300,
    split: str = "test",
) -> tuple[AdversarialSet, MlpModel]:
    """Train an independent twin on the standard train split and attack
    `split` with it. Returns (adversarial set, twin model); the examples
    are meant to be evaluated on a separately trained target."""
    x_train, y_train = dataset.split("train")
    twin = mlp_init(dataset.n_features, hidden, dataset.num_classes, seed=twin_seed)
    twin_cfg = TrainConfig(
        learning_rate=train_cfg.learning_rate,
        epochs=train_cfg.epochs,
        batch_size=train_cfg.batch_size,
        optimizer=train_cfg.optimizer,
        seed=twin_seed,
    )
    twin, _ = train(twin, x_train, y_train, twin_cfg)
    x, y = dataset.split(split)
    x_adv = run_attack(twin, x, y, attack_cfg)
    prov = {
        "kind": attack_cfg.kind,
        "eps": attack_cfg.eps,
        "pgd_alpha": attack_cfg.alpha,
        "pgd_iters": attack_cfg.pgd_iters,
        "random_start": attack_cfg.random_start,
        "attack_seed": attack_cfg.seed,
        "twin_seed": twin_seed,
        "twin_hash": model_hash(twin),
        "split": split,
        "twin_train_accuracy": accuracy(twin, x_train, y_train),
    }
    return AdversarialSet(x_clean=x, x_adv=x_adv, y=y, provenance=prov), twin
