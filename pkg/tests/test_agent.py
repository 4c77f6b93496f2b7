import itertools

import numpy as np
import pytest

from robustsel.agent import (
    AgentConfig,
    ReplayBuffer,
    Transition,
    dqn_train_step,
    epsilon_at,
    greedy_rollout,
    load_checkpoint,
    q_forward,
    q_init,
    q_loss_and_grads,
    run_training,
    save_checkpoint,
    select_action,
)
from robustsel.env import EnvConfig, FeatureSelectionEnv
from robustsel.robust_loss import TabularEvaluator
from robustsel.scoring import METRICS, FeatureQueues


def rand_transition(rng, terminal=False, reward=None):
    return Transition(
        state_vec=rng.uniform(-1, 1, 15),
        action=int(rng.integers(6)),
        reward=float(reward if reward is not None else rng.normal()),
        next_state_vec=rng.uniform(-1, 1, 15),
        terminal=terminal,
        valid_next_actions=np.ones(6, dtype=bool),
    )


# ---------------------------------------------------------------------------
# action selection


def test_select_action_greedy_argmax():
    qnet = q_init(seed=0)
    qnet.w1[:] = 0
    qnet.b1[:] = 1.0
    qnet.w2[:] = 0
    qnet.b2[:] = [1, 5, 3, 0, 0, 0]
    rng = np.random.default_rng(0)
    a = select_action(qnet, np.zeros(15), 0.0, np.ones(6, bool), rng)
    assert a == 1


def test_select_action_masks_invalid():
    qnet = q_init(seed=0)
    qnet.w1[:] = 0
    qnet.b1[:] = 1.0
    qnet.w2[:] = 0
    qnet.b2[:] = [1, 5, 3, 0, 0, 0]
    valid = np.array([True, False, True, True, True, True])
    rng = np.random.default_rng(0)
    assert select_action(qnet, np.zeros(15), 0.0, valid, rng) == 2


def test_select_action_uniform_at_epsilon_one():
    qnet = q_init(seed=1)
    valid = np.array([True, False, True, True, False, True])
    rng = np.random.default_rng(42)
    counts = np.zeros(6)
    n = 10_000
    for _ in range(n):
        counts[select_action(qnet, np.zeros(15), 1.0, valid, rng)] += 1
    freqs = counts / n
    assert freqs[~valid].sum() == 0
    assert np.all(np.abs(freqs[valid] - 1 / valid.sum()) < 0.02)


def test_select_action_empty_mask_rejected():
    with pytest.raises(ValueError):
        select_action(q_init(seed=0), np.zeros(15), 0.5, np.zeros(6, bool), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Bellman step


def test_terminal_target_is_reward():
    rng = np.random.default_rng(3)
    qnet = q_init(seed=3)
    target = q_init(seed=4)
    t = rand_transition(rng, terminal=True, reward=2.0)
    from robustsel.agent import bellman_targets

    assert bellman_targets(target, [t], gamma=1.0)[0] == 2.0


def test_single_transition_regression_converges():
    rng = np.random.default_rng(5)
    qnet = q_init(seed=5)
    target = qnet.copy()
    t = rand_transition(rng, terminal=True, reward=2.0)
    from robustsel.agent import _AdamState

    adam = _AdamState(qnet)
    for _ in range(500):
        dqn_train_step(qnet, target, [t], gamma=1.0, lr=0.01, adam=adam)
    q = q_forward(qnet, t.state_vec)[t.action]
    assert abs(q - 2.0) < 0.01


def test_q_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    qnet = q_init(seed=7)
    target = q_init(seed=8)
    batch = [rand_transition(rng, terminal=bool(i % 2)) for i in range(6)]
    loss, grads = q_loss_and_grads(qnet, target, batch, gamma=0.9)
    h = 1e-6
    for name, grad in zip(("w1", "b1", "w2", "b2"), grads):
        arr = getattr(qnet, name)
        for idx in list(np.ndindex(arr.shape))[:8]:
            orig = arr[idx]
            arr[idx] = orig + h
            hi, _ = q_loss_and_grads(qnet, target, batch, gamma=0.9)
            arr[idx] = orig - h
            lo, _ = q_loss_and_grads(qnet, target, batch, gamma=0.9)
            arr[idx] = orig
            numeric = (hi - lo) / (2 * h)
            assert abs(grad[idx] - numeric) < 1e-4 * max(abs(numeric), 1.0)


def test_valid_next_action_masking_in_targets():
    from robustsel.agent import bellman_targets

    target = q_init(seed=9)
    s = np.zeros(15)
    q_next = q_forward(target, s)
    best_two = np.argsort(q_next)[-2:]
    mask = np.ones(6, bool)
    mask[best_two[-1]] = False  # exclude the argmax
    t = Transition(s, 0, 1.0, s, False, mask)
    got = bellman_targets(target, [t], gamma=1.0)[0]
    assert got == pytest.approx(1.0 + q_next[mask].max())


# ---------------------------------------------------------------------------
# replay buffer


def test_buffer_ring_overwrites():
    buf = ReplayBuffer(capacity=3)
    rng = np.random.default_rng(0)
    items = [rand_transition(rng) for _ in range(5)]
    for t in items:
        buf.add(t)
    assert len(buf) == 3
    stored_rewards = {t.reward for t in buf._items}
    assert stored_rewards == {items[2].reward, items[3].reward, items[4].reward}


# ---------------------------------------------------------------------------
# stub MDP helpers


def stub_mdp_env(losses, n_features, baseline=0.5, scores=None, k_window=5, elim_threshold=10.0):
    scores = scores if scores is not None else np.linspace(1.0, 0.1, n_features)
    queues = FeatureQueues({m: np.asarray(scores, dtype=float) for m in METRICS})
    evaluator = TabularEvaluator(losses, n_features, baseline=baseline)
    return FeatureSelectionEnv(
        queues, evaluator, EnvConfig(k_window=k_window, elim_threshold=elim_threshold, step_cap=100)
    )


def full_table(loss_of_mask, n):
    return {
        frozenset(c): loss_of_mask(frozenset(c))
        for r in range(1, n + 1)
        for c in itertools.combinations(range(n), r)
    }


def brute_force_best(make_env):
    """Enumerate complete episodes; return (best return under raw reward,
    set of optimal action tuples)."""
    from conftest import enumerate_trajectories

    best, argbest = -np.inf, set()
    for actions, outcomes in enumerate_trajectories(make_env):
        ret = sum(o.raw_reward for o in outcomes)
        if ret > best + 1e-12:
            best, argbest = ret, {actions}
        elif abs(ret - best) <= 1e-12:
            argbest.add(actions)
    return best, argbest


# ---------------------------------------------------------------------------
# training loop


def three_feature_losses():
    """Feature 1 is the winner; greedy must learn to reach {1} fast.

    Scores are arranged so different actions pop different features:
    queue heads differ per metric.
    """
    base = {
        frozenset({0}): 0.45,
        frozenset({1}): 0.20,
        frozenset({2}): 0.40,
        frozenset({0, 1}): 0.30,
        frozenset({0, 2}): 0.42,
        frozenset({1, 2}): 0.32,
        frozenset({0, 1, 2}): 0.35,
    }
    return base


def heterogeneous_queues(n):
    """Each metric ranks features differently so actions are distinct."""
    rng = np.random.default_rng(17)
    return {m: rng.permutation(np.linspace(0.9, 0.1, n)) for m in METRICS}


def make_stub_env_heterogeneous(losses, n, k_window=2):
    queues = FeatureQueues(heterogeneous_queues(n))
    evaluator = TabularEvaluator(losses, n, baseline=0.5)
    return FeatureSelectionEnv(
        queues, evaluator, EnvConfig(k_window=k_window, elim_threshold=10.0, step_cap=100)
    )


def test_run_training_deterministic():
    cfg = AgentConfig(steps=150, warmup=20, eps_decay_steps=100, target_sync=50, batch=8, seed=3)
    losses = three_feature_losses()
    r1 = run_training(make_stub_env_heterogeneous(losses, 3), cfg)
    r2 = run_training(make_stub_env_heterogeneous(losses, 3), cfg)
    assert r1.best_combined == r2.best_combined
    assert [s["feature"] for s in r1.step_history] == [s["feature"] for s in r2.step_history]


def test_best_mask_is_min_over_history():
    cfg = AgentConfig(steps=200, warmup=20, eps_decay_steps=100, target_sync=100, batch=8, seed=1)
    result = run_training(make_stub_env_heterogeneous(three_feature_losses(), 3), cfg)
    evaluated = [s["combined"] for s in result.step_history if not s["eliminated"]]
    assert result.best_combined == min(evaluated)
    assert result.best_mask is not None


def test_reverted_transitions_never_buffered():
    losses = {
        frozenset({0}): 0.30,
        frozenset({1}): 0.95,  # picking 1 first raises loss: eliminated
        frozenset({0, 1}): 0.25,
    }
    scores = {m: np.array([0.2, 0.9]) for m in METRICS}  # heads all point at 1
    queues = FeatureQueues(scores)
    evaluator = TabularEvaluator(losses, 2, baseline=0.5)
    env = FeatureSelectionEnv(queues, evaluator, EnvConfig(elim_threshold=0.05, step_cap=100))
    cfg = AgentConfig(steps=40, warmup=5, eps_decay_steps=20, target_sync=20, batch=4, seed=0)
    result = run_training(env, cfg)
    eliminated_steps = [s for s in result.step_history if s["eliminated"]]
    assert eliminated_steps, "scenario should trigger at least one elimination"
    assert 1 in env.eliminated


def test_epsilon_linear_decay():
    cfg = AgentConfig(steps=4000, eps_final=0.1, eps_decay_steps=2000)
    assert epsilon_at(0, cfg) == 1.0
    assert epsilon_at(1000, cfg) == pytest.approx(0.55)
    assert epsilon_at(2000, cfg) == pytest.approx(0.1)
    assert epsilon_at(3500, cfg) == pytest.approx(0.1)


def test_greedy_policy_matches_brute_force_on_stub():
    losses = three_feature_losses()
    cfg = AgentConfig(
        steps=1500, lr=0.01, batch=16, gamma=1.0, eps_final=0.1,
        eps_decay_steps=800, warmup=50, target_sync=250, buffer_cap=2000, seed=0,
    )
    result = run_training(make_stub_env_heterogeneous(losses, 3), cfg)
    best_return, optimal_seqs = brute_force_best(lambda: make_stub_env_heterogeneous(losses, 3))
    greedy_env = make_stub_env_heterogeneous(losses, 3)
    actions = tuple(greedy_rollout(greedy_env, result.qnet))
    greedy_return = sum(s["raw_reward"] for s in greedy_env.trace)
    assert greedy_return == pytest.approx(best_return)
    assert actions in optimal_seqs


def test_checkpoint_roundtrip(tmp_path):
    qnet = q_init(seed=12)
    path = tmp_path / "ckpt.json"
    save_checkpoint(str(path), qnet, step=123, buffer_len=45, best_mask=None)
    loaded, step, buf_len, best = load_checkpoint(str(path))
    assert step == 123 and buf_len == 45 and best is None
    assert np.allclose(loaded.w1, qnet.w1)
    assert np.allclose(loaded.b2, qnet.b2)
