"""Deep Q-learning over the feature-selection environment.

A 15 -> 128 -> 6 network learns action values from a uniform replay
buffer with a periodically synced target network. Epsilon decays linearly
to its floor. Transitions reverted by feature elimination never enter the
buffer. The run's result is the mask with the lowest combined robust loss
ever evaluated, not the last episode's terminal mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .env import N_ACTIONS, STATE_DIM, FeatureSelectionEnv
from .errors import InvalidActionError
from .robust_loss import FeatureMask


@dataclass
class QNet:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def copy(self) -> "QNet":
        return QNet(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def q_init(input_dim: int = STATE_DIM, hidden: int = 128, n_actions: int = N_ACTIONS, seed: int = 0) -> QNet:
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (input_dim + hidden))
    lim2 = np.sqrt(6.0 / (hidden + n_actions))
    return QNet(
        w1=rng.uniform(-lim1, lim1, size=(input_dim, hidden)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-lim2, lim2, size=(hidden, n_actions)),
        b2=np.zeros(n_actions),
    )


def q_forward(qnet: QNet, s: np.ndarray) -> np.ndarray:
    """Action values; linear output head."""
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    sb = np.atleast_2d(s)
    h = np.maximum(sb @ qnet.w1 + qnet.b1, 0.0)
    q = h @ qnet.w2 + qnet.b2
    return q[0] if single else q


@dataclass(frozen=True)
class Transition:
    state_vec: np.ndarray
    action: int
    reward: float
    next_state_vec: np.ndarray
    terminal: bool
    valid_next_actions: np.ndarray  # bool (6,)


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0

    def add(self, t: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._cursor] = t
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


def select_action(
    qnet: QNet,
    state_vec: np.ndarray,
    epsilon: float,
    valid_mask: np.ndarray,
    rng: np.random.Generator,
) -> int:
    """Epsilon-greedy over the valid actions; greedy ties go to the lowest index."""
    valid = np.flatnonzero(valid_mask)
    if len(valid) == 0:
        raise ValueError("no valid actions to select from")
    if rng.random() < epsilon:
        return int(valid[rng.integers(len(valid))])
    q = q_forward(qnet, state_vec).copy()
    q[~np.asarray(valid_mask, dtype=bool)] = -np.inf
    return int(np.argmax(q))


def bellman_targets(target_net: QNet, batch: list[Transition], gamma: float) -> np.ndarray:
    """r for terminal transitions; r + gamma * max valid target-Q otherwise."""
    targets = np.empty(len(batch))
    next_states = np.vstack([t.next_state_vec for t in batch])
    q_next = q_forward(target_net, next_states)
    for i, t in enumerate(batch):
        if t.terminal or not t.valid_next_actions.any():
            targets[i] = t.reward
        else:
            targets[i] = t.reward + gamma * q_next[i][t.valid_next_actions].max()
    return targets


def q_loss_and_grads(
    qnet: QNet, target_net: QNet, batch: list[Transition], gamma: float
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Mean squared Bellman error and its parameter gradients."""
    states = np.vstack([t.state_vec for t in batch])
    actions = np.array([t.action for t in batch])
    targets = bellman_targets(target_net, batch, gamma)
    n = len(batch)
    z1 = states @ qnet.w1 + qnet.b1
    h = np.maximum(z1, 0.0)
    q = h @ qnet.w2 + qnet.b2
    picked = q[np.arange(n), actions]
    err = picked - targets
    loss = float(np.mean(err**2))
    dq = np.zeros_like(q)
    dq[np.arange(n), actions] = 2.0 * err / n
    gw2 = h.T @ dq
    gb2 = dq.sum(axis=0)
    dh = dq @ qnet.w2.T
    dh[z1 <= 0] = 0.0
    gw1 = states.T @ dh
    gb1 = dh.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2)


class _AdamState:
    def __init__(self, qnet: QNet, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        shapes = [qnet.w1.shape, qnet.b1.shape, qnet.w2.shape, qnet.b2.shape]
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def apply(self, qnet: QNet, grads, lr: float) -> None:
        self.t += 1
        params = [qnet.w1, qnet.b1, qnet.w2, qnet.b2]
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1**self.t)
            vhat = self.v[i] / (1 - self.beta2**self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


def dqn_train_step(
    qnet: QNet,
    target_net: QNet,
    batch: list[Transition],
    gamma: float,
    lr: float,
    adam: _AdamState | None = None,
) -> float:
    """One gradient step on the Bellman MSE (in place); returns the loss."""
    if not batch:
        raise ValueError("batch must be non-empty")
    loss, grads = q_loss_and_grads(qnet, target_net, batch, gamma)
    if adam is not None:
        adam.apply(qnet, grads, lr)
    else:
        for p, g in zip((qnet.w1, qnet.b1, qnet.w2, qnet.b2), grads):
            p -= lr * g
    return loss


@dataclass
class AgentConfig:
    steps: int = 4000
    lr: float = 0.01
    batch: int = 64
    gamma: float = 1.0
    eps_final: float = 0.1
    eps_decay_steps: int = 2000
    warmup: int = 100
    target_sync: int = 1000
    buffer_cap: int = 10000
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.warmup < self.steps:
            raise ValueError(f"warmup ({self.warmup}) must be < steps ({self.steps})")
        if not 0 < self.target_sync <= self.steps:
            raise ValueError(f"target_sync must be in (0, steps], got {self.target_sync}")


@dataclass
class TrainingResult:
    best_mask: FeatureMask | None
    best_combined: float
    qnet: QNet
    step_history: list[dict] = field(default_factory=list)
    episode_history: list[dict] = field(default_factory=list)
    final_step: int = 0


def epsilon_at(step: int, cfg: AgentConfig) -> float:
    """Linear decay from 1.0 to eps_final over eps_decay_steps."""
    frac = min(step / cfg.eps_decay_steps, 1.0)
    return 1.0 + frac * (cfg.eps_final - 1.0)


def run_training(env: FeatureSelectionEnv, cfg: AgentConfig) -> TrainingResult:
    """Outer DQN loop over episodes until the global step budget is spent.

    Every env step (including reverted ones) ticks the budget; reverted
    transitions are excluded from the replay buffer. Deterministic per
    seed.
    """
    rng = np.random.default_rng(cfg.seed)
    qnet = q_init(seed=cfg.seed)
    target = qnet.copy()
    adam = _AdamState(qnet)
    buffer = ReplayBuffer(cfg.buffer_cap)
    best_mask: FeatureMask | None = None
    best_combined = np.inf
    step_history: list[dict] = []
    episode_history: list[dict] = []
    global_step = 0
    episode = 0
    while global_step < cfg.steps:
        try:
            state = env.reset()
        except InvalidActionError:
            break  # every feature eliminated; nothing left to select
        s_vec = env.encode(state)
        while not env.terminal and global_step < cfg.steps:
            valid = env.valid_actions()
            if not valid.any():
                break
            eps = epsilon_at(global_step, cfg)
            action = select_action(qnet, s_vec, eps, valid, rng)
            outcome = env.step(action)
            global_step += 1
            ns_vec = env.encode(outcome.next_state)
            if outcome.eliminated_feature is None:
                buffer.add(
                    Transition(
                        state_vec=s_vec,
                        action=action,
                        reward=outcome.shaped_reward,
                        next_state_vec=ns_vec,
                        terminal=outcome.terminal,
                        valid_next_actions=env.valid_actions(),
                    )
                )
                combined = outcome.next_state.loss_terms[2]
                if combined < best_combined:
                    best_combined = combined
                    best_mask = outcome.next_state.mask
            td_loss = None
            if global_step > cfg.warmup and len(buffer) >= cfg.batch:
                td_loss = dqn_train_step(
                    qnet, target, buffer.sample(cfg.batch, rng), cfg.gamma, cfg.lr, adam
                )
            if global_step % cfg.target_sync == 0:
                target = qnet.copy()
            record = dict(env.trace[-1])
            record.update(
                {
                    "global_step": global_step,
                    "episode": episode,
                    "epsilon": eps,
                    "td_loss": td_loss,
                }
            )
            step_history.append(record)
            s_vec = ns_vec
        summary = env.episode_summary()
        summary["episode"] = episode
        summary["global_step"] = global_step
        episode_history.append(summary)
        episode += 1
    return TrainingResult(
        best_mask=best_mask,
        best_combined=float(best_combined),
        qnet=qnet,
        step_history=step_history,
        episode_history=episode_history,
        final_step=global_step,
    )


def greedy_rollout(env: FeatureSelectionEnv, qnet: QNet, max_steps: int = 10_000) -> list[int]:
    """Run one epsilon=0 episode; returns the action sequence."""
    rng = np.random.default_rng(0)  # unused at epsilon 0
    state = env.reset()
    s_vec = env.encode(state)
    actions: list[int] = []
    steps = 0
    while not env.terminal and steps < max_steps:
        valid = env.valid_actions()
        if not valid.any():
            break
        a = select_action(qnet, s_vec, 0.0, valid, rng)
        outcome = env.step(a)
        actions.append(a)
        s_vec = env.encode(outcome.next_state)
        steps += 1
    return actions


def save_checkpoint(path: str, qnet: QNet, step: int, buffer_len: int, best_mask: FeatureMask | None) -> None:
    """Resumable-run snapshot: weights, step counter, buffer summary."""
    payload = {
        "format": "qnet-checkpoint-v1",
        "step": step,
        "buffer_len": buffer_len,
        "best_mask": best_mask.bits() if best_mask else None,
        "weights": {
            "w1": qnet.w1.tolist(),
            "b1": qnet.b1.tolist(),
            "w2": qnet.w2.tolist(),
            "b2": qnet.b2.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path: str) -> tuple[QNet, int, int, list[int] | None]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "qnet-checkpoint-v1":
        raise ValueError(f"not a qnet checkpoint: {path}")
    w = payload["weights"]
    qnet = QNet(
        np.asarray(w["w1"], dtype=float),
        np.asarray(w["b1"], dtype=float),
        np.asarray(w["w2"], dtype=float),
        np.asarray(w["b2"], dtype=float),
    )
    return qnet, payload["step"], payload["buffer_len"], payload.get("best_mask")
