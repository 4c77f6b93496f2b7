import logging

import numpy as np
import pytest

from robustsel.data import SyntheticSpec, allocate, generate_synthetic
from robustsel.harness import (
    AttackSuite,
    evaluate_features,
    filter_adversarial_pairs,
    ig_removal_curve,
    metric_sweep,
    prepare_attack_suite,
)
from robustsel.nn import TrainConfig, mlp_init, train
from robustsel.robust_loss import FeatureMask


# enough epochs that the trained model genuinely leans on the fragile
# features; underfit models barely react to the attack
TRAIN = TrainConfig(learning_rate=0.05, epochs=40, seed=0)


@pytest.fixture(scope="module")
def ds():
    data = generate_synthetic(
        SyntheticSpec(n_robust=6, n_nonrobust=6, n_noise=8, samples=900, seed=11)
    )
    return allocate(data, seed=2, test_fraction=0.25)


@pytest.fixture(scope="module")
def suite(ds, tmp_path_factory):
    cache = tmp_path_factory.mktemp("adv_cache")
    return prepare_attack_suite(
        ds, eps=0.1, twin_seed=50, train_cfg=TRAIN, hidden=16, cache_dir=str(cache)
    )


@pytest.fixture(scope="module")
def target_model(ds):
    model = mlp_init(ds.n_features, 16, ds.num_classes, seed=0)
    x, y = ds.split("train")
    model, _ = train(model, x, y, TRAIN)
    return model


# ---------------------------------------------------------------------------
# attack suite


def test_suite_cache_roundtrip(ds, tmp_path, caplog):
    cache = tmp_path / "cache"
    first = prepare_attack_suite(
        ds, eps=0.05, twin_seed=1, train_cfg=TRAIN, hidden=8, cache_dir=str(cache)
    )
    with caplog.at_level(logging.INFO):
        second = prepare_attack_suite(
            ds, eps=0.05, twin_seed=1, train_cfg=TRAIN, hidden=8, cache_dir=str(cache)
        )
    assert "cache hit" in caplog.text
    assert np.array_equal(first.adv["pgd"], second.adv["pgd"])
    assert np.array_equal(first.adv["fgsm"], second.adv["fgsm"])


def test_suite_respects_budget(suite):
    for kind in ("fgsm", "pgd"):
        assert np.abs(suite.adv[kind] - suite.x_clean).max() <= 0.1
        assert suite.adv[kind].min() >= 0 and suite.adv[kind].max() <= 1


# ---------------------------------------------------------------------------
# evaluate_features


def test_eval_row_identities(ds, suite):
    mask = FeatureMask.from_indices(range(6), ds.n_features)
    row = evaluate_features(mask, ds, suite, TRAIN, hidden=16, repeats=2, seed=0)
    assert row.avg_acc == (row.benign_acc + row.pgd_acc) / 2
    if row.pgd_acc > 0:
        assert abs(row.tradeoff_ratio - row.benign_acc / row.pgd_acc) < 1e-9
    for v in (row.benign_acc, row.fgsm_acc, row.pgd_acc):
        assert 0.0 <= v <= 1.0


def test_eval_repeats_reproducible(ds, suite):
    mask = FeatureMask.from_indices([0, 1, 6, 7], ds.n_features)
    a = evaluate_features(mask, ds, suite, TRAIN, hidden=16, repeats=1, seed=4)
    b = evaluate_features(mask, ds, suite, TRAIN, hidden=16, repeats=1, seed=4)
    assert a == b


def test_eval_robust_mask_beats_nonrobust_under_pgd(ds, suite):
    roles = np.array(ds.feature_roles)
    robust = FeatureMask.from_indices(np.flatnonzero(roles == "robust"), ds.n_features)
    nonrobust = FeatureMask.from_indices(np.flatnonzero(roles == "nonrobust"), ds.n_features)
    row_r = evaluate_features(robust, ds, suite, TRAIN, hidden=16, repeats=2, seed=1)
    row_n = evaluate_features(nonrobust, ds, suite, TRAIN, hidden=16, repeats=2, seed=1)
    assert row_r.pgd_acc >= row_n.pgd_acc + 0.3


# ---------------------------------------------------------------------------
# removal curves


@pytest.fixture(scope="module")
def pairs(target_model, suite):
    x_c, x_a, y = filter_adversarial_pairs(target_model, suite.x_clean, suite.adv["pgd"], suite.y)
    assert len(y) >= 20, "attack should produce usable pairs"
    return x_c[:60], x_a[:60], y[:60]


def test_removal_curve_endpoints(target_model, pairs, ds):
    x_c, x_a, y = pairs
    rows = ig_removal_curve(
        target_model, x_c, x_a, y, mode="highest", k_grid=[0, ds.n_features], ig_steps=24
    )
    assert rows[0]["benign"] == 0.0
    assert rows[-1]["benign"] == 1.0


def test_removal_curve_proportions_sum_to_one(target_model, pairs, ds):
    x_c, x_a, y = pairs
    for mode in ("highest", "random", "lowest"):
        rows = ig_removal_curve(
            target_model, x_c, x_a, y, mode=mode, k_grid=[0, 3, 7, 12, 20], seed=5, ig_steps=24
        )
        for r in rows:
            assert r["benign"] + r["same_wrong"] + r["new_wrong"] == pytest.approx(1.0, abs=1e-9)


def test_removal_highest_dominates_random(target_model, pairs, ds):
    x_c, x_a, y = pairs
    grid = [3, 6, 9, 12]
    high = ig_removal_curve(target_model, x_c, x_a, y, "highest", grid, seed=7, ig_steps=24)
    rand = ig_removal_curve(target_model, x_c, x_a, y, "random", grid, seed=7, ig_steps=24)
    gains = [h["benign"] - r["benign"] for h, r in zip(high, rand)]
    assert max(gains) > 0.1
    assert np.mean(gains) > 0


def test_removal_bad_mode(target_model, pairs):
    x_c, x_a, y = pairs
    with pytest.raises(ValueError):
        ig_removal_curve(target_model, x_c, x_a, y, "sideways", [1])


# ---------------------------------------------------------------------------
# metric sweep


def test_sweep_full_k_equals_full_feature_eval(ds, suite):
    rng = np.random.default_rng(0)
    scores = rng.uniform(0, 1, ds.n_features)
    rows = metric_sweep(ds, "mi", scores, [ds.n_features], suite, TRAIN, hidden=16, seed=3)
    full_mask = FeatureMask.from_indices(range(ds.n_features), ds.n_features)
    row_full = evaluate_features(full_mask, ds, suite, TRAIN, hidden=16, repeats=1, seed=3)
    assert rows[0]["test_acc"] == pytest.approx(row_full.benign_acc)
    assert rows[0]["robust_acc"] == pytest.approx(row_full.pgd_acc)


def test_sweep_random_mode_needs_no_scores(ds, suite):
    rows = metric_sweep(ds, "random", None, [2, 5], suite, TRAIN, hidden=16, seed=1)
    assert [r["k"] for r in rows] == [2, 5]
