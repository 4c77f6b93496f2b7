"""Feature-selection MDP.

Actions pop the head of one of six metric queues; the popped feature
leaves every queue. Each kept step re-evaluates the 0-1 robust loss of the
grown mask. A step that raises the combined loss by at least the
elimination threshold is reverted: the feature is permanently eliminated
and the pre-step state restored (only the queues and eliminated set
change). Reward is potential-shaped: F = gamma * (1 - L') - (1 - L), with
the raw terminal reward 1 - L added when the no-progress window closes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidActionError
from .robust_loss import FeatureMask, MaskEvaluator
from .scoring import METRICS, FeatureQueues

N_ACTIONS = len(METRICS)
STATE_DIM = 2 * N_ACTIONS + 3  # action counts + queue heads + three loss terms


@dataclass
class EnvConfig:
    k_window: int = 5
    elim_threshold: float = 0.05
    gamma: float = 1.0
    step_cap: int = 4000  # scale for the action counters in the encoding

    def __post_init__(self) -> None:
        if self.k_window < 1:
            raise ValueError(f"k_window must be >= 1, got {self.k_window}")
        if self.elim_threshold <= 0:
            raise ValueError(f"elim_threshold must be > 0, got {self.elim_threshold}")


@dataclass(frozen=True)
class EnvState:
    mask: FeatureMask
    action_counts: tuple[int, ...]
    queue_head_scores: tuple[float, ...]
    loss_terms: tuple[float, float, float]  # (natural, gaussian, combined)
    step: int
    no_progress: int
    best_combined: float


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    shaped_reward: float
    terminal: bool
    eliminated_feature: int | None
    raw_reward: float


def encode_state(state: EnvState, step_cap: int = 4000) -> np.ndarray:
    """15-dim layout: 6 scaled action counts, 6 queue-head scores, then
    natural / gaussian / combined loss."""
    return np.concatenate(
        [
            np.asarray(state.action_counts, dtype=float) / step_cap,
            np.asarray(state.queue_head_scores, dtype=float),
            np.asarray(state.loss_terms, dtype=float),
        ]
    )


class FeatureSelectionEnv:
    """One environment instance spans a whole training run: eliminated
    features stay gone across episodes, selections reset with each
    reset()."""

    def __init__(self, queues: FeatureQueues, evaluator: MaskEvaluator, cfg: EnvConfig | None = None):
        if queues.remaining() == 0:
            raise InvalidActionError("all queues are empty")
        self.cfg = cfg or EnvConfig()
        self.evaluator = evaluator
        self._base = queues
        self._eliminated: set[int] = set(queues.eliminated)
        self.queues = queues.reset_copy()
        self.state: EnvState | None = None
        self.terminal = False
        self.trace: list[dict] = []
        self.episode_best: tuple[float, FeatureMask] | None = None

    @property
    def eliminated(self) -> set[int]:
        return self._eliminated

    def reset(self) -> EnvState:
        self.queues = FeatureQueues(self._base.scores, eliminated=self._eliminated)
        if self.queues.remaining() == 0:
            raise InvalidActionError("every feature has been eliminated; nothing to select")
        baseline = self.evaluator.baseline_report()
        mask = FeatureMask(
            selected=(), n_features=self._base.n_features, eliminated=frozenset(self.eliminated)
        )
        self.state = EnvState(
            mask=mask,
            action_counts=(0,) * N_ACTIONS,
            queue_head_scores=tuple(self.queues.head_scores()),
            loss_terms=(baseline.natural_error, baseline.gaussian_error, baseline.combined),
            step=0,
            no_progress=0,
            best_combined=baseline.combined,
        )
        self.terminal = False
        self.trace = []
        self.episode_best = None
        return self.state

    def valid_actions(self) -> np.ndarray:
        return np.array([self.queues.head(a) is not None for a in range(N_ACTIONS)])

    def step(self, action: int) -> StepOutcome:
        if self.state is None:
            raise InvalidActionError("call reset() before step()")
        if self.terminal:
            raise InvalidActionError("episode is terminal; call reset()")
        if not 0 <= action < N_ACTIONS:
            raise InvalidActionError(f"action must be in [0, {N_ACTIONS}), got {action}")
        if self.queues.head(action) is None:
            raise InvalidActionError(f"queue {METRICS[action]!r} is empty")
        state = self.state
        feature = self.queues.pop(action)
        new_mask = state.mask.with_feature(feature)
        report = self.evaluator.evaluate(new_mask)
        loss_before = state.loss_terms[2]
        loss_after = report.combined

        if loss_after - loss_before >= self.cfg.elim_threshold:
            # revert: drop the feature for good, restore the pre-step state
            self.queues.eliminate(feature)
            self._eliminated.add(feature)
            next_state = replace(
                self.state,
                mask=state.mask.with_eliminated(feature),
                queue_head_scores=tuple(self.queues.head_scores()),
            )
            outcome = StepOutcome(
                next_state=next_state,
                shaped_reward=0.0,
                terminal=False,
                eliminated_feature=feature,
                raw_reward=0.0,
            )
        else:
            counts = list(state.action_counts)
            counts[action] += 1
            progressed = loss_after < state.best_combined
            no_progress = 0 if progressed else state.no_progress + 1
            best = min(state.best_combined, loss_after)
            terminal = no_progress >= self.cfg.k_window or self.queues.remaining() == 0
            raw = (1.0 - loss_after) if terminal else 0.0
            shaped = self.cfg.gamma * (1.0 - loss_after) - (1.0 - loss_before) + raw
            next_state = EnvState(
                mask=new_mask,
                action_counts=tuple(counts),
                queue_head_scores=tuple(self.queues.head_scores()),
                loss_terms=(report.natural_error, report.gaussian_error, report.combined),
                step=state.step + 1,
                no_progress=no_progress,
                best_combined=best,
            )
            outcome = StepOutcome(
                next_state=next_state,
                shaped_reward=shaped,
                terminal=terminal,
                eliminated_feature=None,
                raw_reward=raw,
            )
            self.terminal = terminal
            if self.episode_best is None or loss_after < self.episode_best[0]:
                self.episode_best = (loss_after, new_mask)

        self.state = outcome.next_state
        self.trace.append(
            {
                "step": state.step,
                "action": int(action),
                "metric": METRICS[action],
                "feature": int(feature),
                "natural": report.natural_error,
                "gaussian": report.gaussian_error,
                "combined": report.combined,
                "shaped_reward": outcome.shaped_reward,
                "raw_reward": outcome.raw_reward,
                "eliminated": outcome.eliminated_feature is not None,
                "terminal": outcome.terminal,
            }
        )
        return outcome

    def encode(self, state: EnvState | None = None) -> np.ndarray:
        return encode_state(state or self.state, self.cfg.step_cap)

    def episode_summary(self) -> dict:
        """Appendix-style action-count record for the finished episode."""
        counts = list(self.state.action_counts) if self.state else [0] * N_ACTIONS
        best_loss, best_mask = self.episode_best if self.episode_best else (None, None)
        return {
            "steps": self.state.step if self.state else 0,
            "action_counts": {m: int(c) for m, c in zip(METRICS, counts)},
            "eliminated": sorted(self.eliminated),
            "best_combined": best_loss,
            "best_mask": best_mask.bits() if best_mask else None,
            "terminal": self.terminal,
        }
