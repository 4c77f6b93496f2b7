"""Two-layer dense softmax classifier with hand-derived gradients.

Plain numpy throughout: forward pass, cross-entropy training with Adam or
SGD, and analytic gradients with respect to parameters and inputs. The
input gradients are what the attack and attribution code consume, so they
are exposed in two flavors: gradient of the training loss and gradient of
a single class probability.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MODEL_FORMAT_VERSION = "mlp-v1"


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    optimizer: str = "adam"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class MlpModel:
    """Weights of an input -> relu(hidden) -> softmax(classes) network."""

    w1: np.ndarray  # (input_dim, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, num_classes)
    b2: np.ndarray  # (num_classes,)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]

    @property
    def layer_weights(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.w1, self.b1), (self.w2, self.b2)]

    def copy(self) -> "MlpModel":
        return MlpModel(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def mlp_init(input_dim: int, hidden: int, num_classes: int, seed: int) -> MlpModel:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    for name, dim in (("input_dim", input_dim), ("hidden", hidden), ("num_classes", num_classes)):
        if dim < 1:
            raise ValueError(f"{name} must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (input_dim + hidden))
    lim2 = np.sqrt(6.0 / (hidden + num_classes))
    return MlpModel(
        w1=rng.uniform(-lim1, lim1, size=(input_dim, hidden)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-lim2, lim2, size=(hidden, num_classes)),
        b2=np.zeros(num_classes),
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {model.input_dim}")
    return x


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a single vector or an (N, M) batch."""
    x = _check_input(model, x)
    z1 = x @ model.w1 + model.b1
    h = np.maximum(z1, 0.0)
    return _softmax(h @ model.w2 + model.b2)


def predict(model: MlpModel, x: np.ndarray) -> np.ndarray:
    return np.argmax(forward(model, x), axis=-1)


def accuracy(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(model, x) == np.asarray(y)))


def cross_entropy(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes."""
    p = np.atleast_2d(forward(model, x))
    y = np.atleast_1d(y)
    return float(-np.mean(np.log(p[np.arange(len(y)), y] + 1e-12)))


def parameter_gradients(
    model: MlpModel, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the mean cross-entropy over the batch, (gw1, gb1, gw2, gb2)."""
    x = np.atleast_2d(_check_input(model, x))
    y = np.atleast_1d(y)
    n = x.shape[0]
    z1 = x @ model.w1 + model.b1
    h = np.maximum(z1, 0.0)
    p = _softmax(h @ model.w2 + model.b2)
    delta2 = p.copy()
    delta2[np.arange(n), y] -= 1.0
    delta2 /= n
    gw2 = h.T @ delta2
    gb2 = delta2.sum(axis=0)
    dh = delta2 @ model.w2.T
    dh[z1 <= 0] = 0.0
    gw1 = x.T @ dh
    gb1 = dh.sum(axis=0)
    return gw1, gb1, gw2, gb2


def input_gradient(model: MlpModel, x: np.ndarray, y: np.ndarray | int, mode: str = "loss") -> np.ndarray:
    """Analytic gradient with respect to the input.

    mode="loss": d/dx of the cross-entropy -log p_y(x).
    mode="prob": d/dx of the class-y probability p_y(x).

    Accepts a single vector or an (N, M) batch; the output matches the
    input's shape.
    """
    x = _check_input(model, x)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    yb = np.atleast_1d(np.asarray(y, dtype=int))
    if yb.size == 1 and xb.shape[0] > 1:
        yb = np.full(xb.shape[0], int(yb[0]))
    n = xb.shape[0]
    z1 = xb @ model.w1 + model.b1
    h = np.maximum(z1, 0.0)
    p = _softmax(h @ model.w2 + model.b2)
    idx = np.arange(n)
    if mode == "loss":
        dz2 = p.copy()
        dz2[idx, yb] -= 1.0
    elif mode == "prob":
        py = p[idx, yb][:, None]
        dz2 = -py * p
        dz2[idx, yb] += py[:, 0]
    else:
        raise ValueError(f"mode must be 'loss' or 'prob', got {mode!r}")
    dh = dz2 @ model.w2.T
    dh[z1 <= 0] = 0.0
    grad = dh @ model.w1.T
    return grad[0] if single else grad


class _Adam:
    def __init__(self, shapes: list[tuple[int, ...]], cfg: TrainConfig):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0
        self.cfg = cfg

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = c.beta1 * self.m[i] + (1 - c.beta1) * g
            self.v[i] = c.beta2 * self.v[i] + (1 - c.beta2) * g * g
            mhat = self.m[i] / (1 - c.beta1**self.t)
            vhat = self.v[i] / (1 - c.beta2**self.t)
            p -= c.learning_rate * mhat / (np.sqrt(vhat) + c.adam_eps)


def train(
    model: MlpModel, x: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[MlpModel, list[float]]:
    """Train a copy of the model; returns (trained model, per-epoch mean loss).

    Mini-batch order is drawn from a generator seeded with cfg.seed, so
    identical configs reproduce identical weights bit for bit. epochs=0 is a
    no-op and returns an unchanged copy.
    """
    x = np.atleast_2d(_check_input(model, x))
    y = np.asarray(y, dtype=int)
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty split")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ValueError(f"labels must lie in [0, {model.num_classes}), got [{y.min()}, {y.max()}]")
    out = model.copy()
    if cfg.epochs == 0:
        return out, []
    rng = np.random.default_rng(cfg.seed)
    params = [out.w1, out.b1, out.w2, out.b2]
    adam = _Adam([p.shape for p in params], cfg) if cfg.optimizer == "adam" else None
    n = x.shape[0]
    bs = min(cfg.batch_size, n)
    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, bs):
            sel = order[start : start + bs]
            xb, yb = x[sel], y[sel]
            losses.append(cross_entropy(out, xb, yb))
            grads = list(parameter_gradients(out, xb, yb))
            if adam is not None:
                adam.step(params, grads)
            else:
                for p, g in zip(params, grads):
                    p -= cfg.learning_rate * g
        history.append(float(np.mean(losses)))
    return out, history


def model_hash(model: MlpModel) -> str:
    """Short stable digest of the weights, used for provenance."""
    h = hashlib.sha256()
    for arr in (model.w1, model.b1, model.w2, model.b2):
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()[:12]


def save_model(model: MlpModel, path: str) -> None:
    """Versioned flat text format: header line, then row-major matrices."""
    lines = [f"{MODEL_FORMAT_VERSION} {model.input_dim} {model.hidden_dim} {model.num_classes}"]
    for arr in (model.w1, model.b1, model.w2, model.b2):
        mat = np.atleast_2d(arr)
        for row in mat:
            lines.append(" ".join("%.17g" % v for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str) -> MlpModel:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != MODEL_FORMAT_VERSION:
            raise ValueError(f"not a {MODEL_FORMAT_VERSION} model file: {path}")
        input_dim, hidden, num_classes = (int(v) for v in header[1:])
        rows = [np.array([float(v) for v in line.split()]) for line in fh if line.strip()]
    expected = input_dim + 1 + hidden + 1
    if len(rows) != expected:
        raise ValueError(f"model file has {len(rows)} data rows, expected {expected}")
    w1 = np.vstack(rows[:input_dim])
    b1 = rows[input_dim]
    w2 = np.vstack(rows[input_dim + 1 : input_dim + 1 + hidden])
    b2 = rows[input_dim + 1 + hidden]
    return MlpModel(w1, b1, w2, b2)
