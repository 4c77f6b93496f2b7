import itertools

import numpy as np
import pytest
from conftest import enumerate_trajectories

from robustsel.env import EnvConfig, FeatureSelectionEnv, encode_state
from robustsel.errors import InvalidActionError
from robustsel.robust_loss import FeatureMask, TabularEvaluator
from robustsel.scoring import METRICS, FeatureQueues


def make_queues(scores_per_feature):
    """All six queues share one score vector: simple, deterministic order."""
    scores = {m: np.asarray(scores_per_feature, dtype=float) for m in METRICS}
    return FeatureQueues(scores)


def stub_env(table, n_features, scores=None, baseline=0.5, **cfg_kw):
    scores = scores if scores is not None else np.linspace(1.0, 0.1, n_features)
    evaluator = TabularEvaluator(table, n_features, baseline=baseline)
    env = FeatureSelectionEnv(make_queues(scores), evaluator, EnvConfig(**cfg_kw))
    return env


# losses as multiples of 1/64 keep every telescoping sum float-exact
def q(x):
    return x / 64.0


# ---------------------------------------------------------------------------
# reset


def test_reset_state_layout():
    env = stub_env({frozenset({0}): q(20)}, n_features=3, baseline=q(32))
    state = env.reset()
    assert state.action_counts == (0,) * 6
    assert state.step == 0 and not env.terminal
    assert state.queue_head_scores == tuple(1.0 for _ in METRICS)
    vec = env.encode(state)
    assert vec.shape == (15,)
    assert np.all(vec[:6] == 0.0)
    assert tuple(vec[12:]) == state.loss_terms


def test_reset_requires_nonempty_queues():
    queues = make_queues([0.5])
    queues.eliminate(0)
    with pytest.raises(InvalidActionError):
        FeatureSelectionEnv(queues, TabularEvaluator({}, 1))


# ---------------------------------------------------------------------------
# step semantics


def test_step_shaped_reward_improvement():
    # baseline 0.5, selecting feature 0 drops combined loss to 0.4
    env = stub_env({frozenset({0}): 0.4}, n_features=1, baseline=0.5)
    env.reset()
    out = env.step(0)
    assert out.shaped_reward == pytest.approx(0.1 + (1 - 0.4))  # queue exhausted => terminal
    assert out.eliminated_feature is None


def test_step_elimination_reverts_state():
    # feature 0 (head) raises the loss 0.40 -> 0.46: eliminated, state reverted
    table = {frozenset({0}): 0.46, frozenset({1}): 0.30}
    env = stub_env(table, n_features=2, baseline=0.40)
    before = env.reset()
    out = env.step(0)
    assert out.eliminated_feature == 0
    assert out.shaped_reward == 0.0 and out.raw_reward == 0.0
    assert not out.terminal
    after = out.next_state
    assert after.mask.selected == before.mask.selected
    assert after.action_counts == before.action_counts
    assert after.step == before.step
    assert after.loss_terms == before.loss_terms
    assert after.mask.eliminated == frozenset({0})
    assert 0 in env.eliminated
    # feature 0 is gone from every queue; heads now point at feature 1
    assert all(env.queues.head(a) == 1 for a in range(6))


def test_eliminated_feature_never_returns():
    table = {frozenset({0}): 0.9, frozenset({1}): 0.3, frozenset({1, 0}): 0.2}
    env = stub_env(table, n_features=2, baseline=0.4)
    env.reset()
    env.step(0)  # eliminates 0
    env.reset()
    assert env.queues.head(0) == 1
    out = env.step(0)
    assert out.next_state.mask.selected == (1,)
    # only feature 1 existed; queues empty => terminal with raw reward
    assert out.terminal


def test_no_progress_window_terminates():
    # every selection keeps the loss flat: no progress from the baseline
    n = 8
    table = {}
    for r in range(1, n + 1):
        for combo in itertools.combinations(range(n), r):
            table[frozenset(combo)] = 0.5
    env = stub_env(table, n_features=n, baseline=0.5, k_window=5)
    env.reset()
    outcomes = [env.step(0) for _ in range(5)]
    assert [o.terminal for o in outcomes] == [False] * 4 + [True]
    assert outcomes[-1].raw_reward == pytest.approx(1 - 0.5)
    with pytest.raises(InvalidActionError):
        env.step(0)


def test_progress_resets_window():
    # step:   1     2     3     4     5     6     7
    # loss:  0.50  0.55  0.55  0.45  0.45  0.45  0.45
    # best:  0.50  0.50  0.50  0.45  0.45  0.45  0.45
    # np:     0     1     2     0     1     2     3  -> terminal at step 7
    losses = [0.50, 0.55, 0.55, 0.45, 0.45, 0.45, 0.45, 0.45]
    n = len(losses)
    table = {}
    for r in range(1, n + 1):
        for combo in itertools.combinations(range(n), r):
            table[frozenset(combo)] = losses[r - 1]
    env = stub_env(table, n_features=n, baseline=0.6, k_window=3, elim_threshold=0.2)
    env.reset()
    seen = []
    while not env.terminal:
        seen.append(env.step(0))
    assert len(seen) == 7
    assert seen[-1].terminal and seen[-1].raw_reward == pytest.approx(1 - 0.45)
    assert [o.next_state.no_progress for o in seen] == [0, 1, 2, 0, 1, 2, 3]


def test_invalid_action_on_empty_queue():
    env = stub_env({frozenset({0}): 0.4}, n_features=1, baseline=0.5)
    env.reset()
    env.step(2)
    assert env.terminal  # single feature consumed


def test_selected_feature_leaves_all_queues():
    table = {
        frozenset({0}): 0.45,
        frozenset({1}): 0.45,
        frozenset({0, 1}): 0.42,
        frozenset({0, 2}): 0.42,
        frozenset({1, 2}): 0.42,
        frozenset({0, 1, 2}): 0.40,
    }
    env = stub_env(table, n_features=3, baseline=0.5)
    env.reset()
    first = env.step(3)
    assert first.next_state.mask.selected == (0,)
    for a in range(6):
        assert env.queues.head(a) == 1


# ---------------------------------------------------------------------------
# encoding


def test_encode_state_single_coordinate_change():
    env = stub_env({frozenset({0}): 0.5, frozenset({1}): 0.5, frozenset({0, 1}): 0.5},
                   n_features=2, baseline=0.5, step_cap=100)
    s0 = env.reset()
    v0 = encode_state(s0, step_cap=100)
    s1 = env.step(0).next_state
    v1 = encode_state(s1, step_cap=100)
    assert v1.shape == (15,)
    # action count 0 moved by 1/step_cap; heads changed; losses flat
    assert v1[0] - v0[0] == pytest.approx(1 / 100)
    assert np.array_equal(v0[12:], v1[12:])


# ---------------------------------------------------------------------------
# telescoping invariant


def test_telescoping_shaped_rewards_exact():
    rng = np.random.default_rng(13)
    n = 3
    table = {}
    for r in range(1, n + 1):
        for combo in itertools.combinations(range(n), r):
            table[frozenset(combo)] = q(int(rng.integers(8, 40)))
    baseline = q(36)

    def make_env():
        return stub_env(table, n_features=n, baseline=baseline, k_window=2,
                        elim_threshold=q(8), scores=[0.9, 0.5, 0.1])

    trajectories = enumerate_trajectories(make_env)
    assert trajectories
    for actions, outcomes in trajectories:
        shaped_sum = sum(o.shaped_reward for o in outcomes)
        raw_sum = sum(o.raw_reward for o in outcomes)
        final_loss = outcomes[-1].next_state.loss_terms[2]
        # sum of F terms telescopes exactly to (1 - L_T) - (1 - L_0)
        assert shaped_sum - raw_sum == (1 - final_loss) - (1 - baseline)
