import numpy as np
import pytest

from robustsel.nn import (
    MlpModel,
    TrainConfig,
    cross_entropy,
    forward,
    input_gradient,
    load_model,
    mlp_init,
    parameter_gradients,
    save_model,
    train,
)


def random_model(rng, input_dim=5, hidden=7, num_classes=3):
    return mlp_init(input_dim, hidden, num_classes, seed=int(rng.integers(1 << 30)))


# ---------------------------------------------------------------------------
# init


def test_init_deterministic():
    a = mlp_init(4, 300, 2, seed=7)
    b = mlp_init(4, 300, 2, seed=7)
    assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)


def test_init_seed_changes_weights():
    a = mlp_init(4, 300, 2, seed=7)
    b = mlp_init(4, 300, 2, seed=8)
    assert not np.array_equal(a.w1, b.w1)


def test_init_rejects_zero_dims():
    with pytest.raises(ValueError):
        mlp_init(0, 300, 2, seed=1)
    with pytest.raises(ValueError):
        mlp_init(4, 0, 2, seed=1)


# ---------------------------------------------------------------------------
# forward


def test_forward_all_zero_weights_uniform():
    m = MlpModel(np.zeros((3, 4)), np.zeros(4), np.zeros((4, 5)), np.zeros(5))
    p = forward(m, np.array([0.3, 0.9, 0.1]))
    assert np.allclose(p, 0.2)


def test_forward_probabilities_sum_to_one():
    rng = np.random.default_rng(0)
    model = random_model(rng)
    x = rng.uniform(0, 1, size=(20, 5))
    p = forward(model, x)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_forward_hand_computed_single_hidden_unit():
    # x=(0.5,), w1=(2,), b1=0.1 -> z1=1.1 -> relu 1.1
    # w2=(1.0, -1.0), b2=(0, 0.2) -> logits (1.1, -0.9)
    m = MlpModel(
        w1=np.array([[2.0]]),
        b1=np.array([0.1]),
        w2=np.array([[1.0, -1.0]]),
        b2=np.array([0.0, 0.2]),
    )
    logits = np.array([1.1, -1.1 + 0.2])
    expected = np.exp(logits) / np.exp(logits).sum()
    assert np.allclose(forward(m, np.array([0.5])), expected, atol=1e-12)


def test_forward_dimension_mismatch():
    model = mlp_init(4, 8, 2, seed=0)
    with pytest.raises(ValueError):
        forward(model, np.zeros(5))


# ---------------------------------------------------------------------------
# gradients vs finite differences


def fd_input_gradient(model, x, y, mode, h=1e-5):
    grad = np.zeros_like(x)
    for j in range(len(x)):
        hi, lo = x.copy(), x.copy()
        hi[j] += h
        lo[j] -= h
        if mode == "loss":
            f_hi = -np.log(forward(model, hi)[y])
            f_lo = -np.log(forward(model, lo)[y])
        else:
            f_hi = forward(model, hi)[y]
            f_lo = forward(model, lo)[y]
        grad[j] = (f_hi - f_lo) / (2 * h)
    return grad


@pytest.mark.parametrize("mode", ["loss", "prob"])
def test_input_gradient_matches_finite_differences(mode):
    rng = np.random.default_rng(42)
    for _ in range(25):
        model = random_model(rng)
        x = rng.uniform(0.05, 0.95, size=5)
        y = int(rng.integers(3))
        analytic = input_gradient(model, x, y, mode=mode)
        numeric = fd_input_gradient(model, x, y, mode)
        denom = max(np.abs(numeric).max(), 1e-8)
        assert np.abs(analytic - numeric).max() / denom < 1e-4


def test_parameter_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    model = random_model(rng)
    x = rng.uniform(0, 1, size=(6, 5))
    y = rng.integers(3, size=6)
    gw1, gb1, gw2, gb2 = parameter_gradients(model, x, y)
    h = 1e-6

    def loss_with(arr, idx, delta, name):
        m = model.copy()
        getattr(m, name)[idx] += delta
        return cross_entropy(m, x, y)

    for name, grad in (("w1", gw1), ("b1", gb1), ("w2", gw2), ("b2", gb2)):
        arr = getattr(model, name)
        it = np.ndindex(arr.shape)
        for idx in list(it)[:10]:
            numeric = (loss_with(arr, idx, h, name) - loss_with(arr, idx, -h, name)) / (2 * h)
            assert abs(grad[idx] - numeric) < 1e-4 * max(abs(numeric), 1.0)


def test_bias_only_model_zero_input_gradient():
    m = MlpModel(np.zeros((3, 4)), np.ones(4), np.ones((4, 2)), np.zeros(2))
    g = input_gradient(m, np.array([0.2, 0.5, 0.7]), 0, mode="loss")
    assert np.allclose(g, 0.0)


def test_prob_gradients_sum_to_zero_over_classes():
    rng = np.random.default_rng(3)
    model = random_model(rng)
    x = rng.uniform(0, 1, size=5)
    total = sum(input_gradient(model, x, y, mode="prob") for y in range(3))
    assert np.allclose(total, 0.0, atol=1e-10)


# ---------------------------------------------------------------------------
# training


def blob_data(rng, n=200):
    y = rng.integers(0, 2, size=n)
    x = rng.normal(0, 0.08, size=(n, 2)) + np.where(y[:, None] == 1, 0.75, 0.25)
    return np.clip(x, 0, 1), y


def test_train_separable_blobs():
    rng = np.random.default_rng(5)
    x, y = blob_data(rng)
    model = mlp_init(2, 16, 2, seed=0)
    model, history = train(model, x, y, TrainConfig(learning_rate=0.05, epochs=50, seed=0))
    acc = np.mean(np.argmax(forward(model, x), axis=1) == y)
    assert acc >= 0.99
    assert history[-1] < history[0]


def test_train_xor():
    rng = np.random.default_rng(11)
    n = 240
    x = rng.uniform(0, 1, size=(n, 2))
    y = ((x[:, 0] > 0.5) ^ (x[:, 1] > 0.5)).astype(int)
    model = mlp_init(2, 32, 2, seed=1)
    model, _ = train(model, x, y, TrainConfig(learning_rate=0.05, epochs=200, seed=1))
    acc = np.mean(np.argmax(forward(model, x), axis=1) == y)
    assert acc >= 0.95


def test_train_zero_epochs_is_noop():
    model = mlp_init(3, 5, 2, seed=2)
    out, history = train(model, np.random.rand(10, 3), np.zeros(10, dtype=int),
                         TrainConfig(epochs=0, seed=0))
    assert history == []
    assert np.array_equal(out.w1, model.w1) and np.array_equal(out.b2, model.b2)


def test_train_bit_reproducible():
    rng = np.random.default_rng(9)
    x, y = blob_data(rng, n=60)
    cfg = TrainConfig(learning_rate=0.03, epochs=5, seed=13)
    m1, h1 = train(mlp_init(2, 8, 2, seed=3), x, y, cfg)
    m2, h2 = train(mlp_init(2, 8, 2, seed=3), x, y, cfg)
    assert h1 == h2
    assert np.array_equal(m1.w1, m2.w1)
    assert np.array_equal(m1.w2, m2.w2)


def test_train_rejects_bad_labels():
    model = mlp_init(2, 4, 2, seed=0)
    with pytest.raises(ValueError):
        train(model, np.random.rand(5, 2), np.array([0, 1, 2, 0, 1]), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(model, np.empty((0, 2)), np.empty(0, dtype=int), TrainConfig(epochs=1))


# ---------------------------------------------------------------------------
# serialization


def test_model_roundtrip_exact(tmp_path):
    model = mlp_init(4, 6, 3, seed=21)
    path = tmp_path / "model.txt"
    save_model(model, str(path))
    loaded = load_model(str(path))
    for a, b in zip(model.layer_weights, loaded.layer_weights):
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])


def test_load_model_rejects_garbage(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("not-a-model 1 2 3\n")
    with pytest.raises(ValueError):
        load_model(str(path))
