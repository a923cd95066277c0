"""Belief trackers and policies over the belief-augmented state.

Three inference regimes feed the policies:

* segmented -- the run-length filter; belief from the MAP segment (default)
  or the full mixture;
* vanilla   -- one never-resetting posterior over the entire history;
* oracle    -- resets its posterior exactly at true segment boundaries
  (requires the ground-truth episode script).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import inference
from .envs import GRID_ACTIONS, EpisodeScript, TransitionRecord
from .inference import InferenceConfig, RunLengthPosterior

__all__ = [
    "SegmentedTracker",
    "VanillaTracker",
    "OracleTracker",
    "make_tracker",
    "greedy_goal_policy",
    "bandwidth_policy",
    "QTable",
    "discretize_grid_state",
    "epsilon_schedule",
]


class SegmentedTracker:
    """Joint run-length / context filter behind a tracker interface."""

    def __init__(self, model, config: InferenceConfig, use_map: bool = True):
        self.model = model
        self.config = config
        self.use_map = use_map
        self.post: RunLengthPosterior = inference.init_posterior(model, config)

    def update(self, rec: TransitionRecord) -> None:
        self.post = inference.update(self.post, rec, self.model, self.config)

    def belief(self):
        if self.post.t == 0:
            return self.model.prior_posterior()
        if self.use_map:
            return inference.map_belief(self.post, self.model)
        # Summary-only mixture: policies consume moments, so skip
        # materializing the per-hypothesis component posteriors.
        _, weights = inference.posterior_runlength(self.post)
        mean, std = inference.mixture_moments(self.post, self.model)
        return inference.BeliefContext(weights=weights, components=(), mean=mean, std=std)

    def map_runlength(self) -> Optional[int]:
        return inference.map_runlength(self.post) if self.post.t > 0 else None

    def runlength_posterior(self):
        return inference.posterior_runlength(self.post) if self.post.t > 0 else None


class VanillaTracker:
    """Posterior over the whole history; never resets at changepoints."""

    def __init__(self, model):
        self.model = model
        self.stats = model.fresh_stats(1)
        self.t = 0

    def update(self, rec: TransitionRecord) -> None:
        self.stats = self.model.update(self.stats, rec)
        self.t += 1

    def belief(self):
        if self.t == 0:
            return self.model.prior_posterior()
        return self.model.posterior(self.stats, 0)

    def map_runlength(self):
        return None

    def runlength_posterior(self):
        return None


class OracleTracker:
    """Resets the context posterior at ground-truth segment boundaries."""

    def __init__(self, model, script: EpisodeScript):
        if script is None:
            raise ValueError("oracle tracker requires the episode script")
        self.model = model
        self.script = script
        self.stats = model.fresh_stats(1)
        self.t = 0

    def update(self, rec: TransitionRecord) -> None:
        if self.script.runlength_at(rec.t) == 1:
            self.stats = self.model.fresh_stats(1)
        self.stats = self.model.update(self.stats, rec)
        self.t += 1

    def belief(self):
        if self.t == 0:
            return self.model.prior_posterior()
        return self.model.posterior(self.stats, 0)

    def map_runlength(self):
        return None

    def runlength_posterior(self):
        return None


def make_tracker(
    kind: str,
    model,
    config: Optional[InferenceConfig] = None,
    script: Optional[EpisodeScript] = None,
    use_map: bool = True,
):
    if kind == "segmented":
        if config is None:
            raise ValueError("segmented tracker requires an inference config")
        return SegmentedTracker(model, config, use_map=use_map)
    if kind == "vanilla":
        return VanillaTracker(model)
    if kind == "oracle":
        return OracleTracker(model, script)
    raise ValueError(f"unknown tracker kind {kind!r}")


# ---------------------------------------------------------------------------
# Grid-world policies
# ---------------------------------------------------------------------------


def greedy_goal_policy(cell: int, belief_probs: np.ndarray, width: int) -> str:
    """One step of a shortest Manhattan path toward the argmax-belief cell.

    Ties in the belief break toward the lowest cell index; horizontal
    movement is taken before vertical.
    """
    target = int(np.argmax(belief_probs))
    row, col = divmod(cell, width)
    trow, tcol = divmod(target, width)
    if col < tcol:
        return "right"
    if col > tcol:
        return "left"
    if row < trow:
        return "down"
    if row > trow:
        return "up"
    return "none"


def bandwidth_policy(belief_mean: float, belief_std: float, kappa: float) -> float:
    """Send below the believed capacity by a safety margin of kappa stds."""
    if belief_std <= 0:
        raise ValueError("belief std must be positive")
    return max(0.0, belief_mean - kappa * belief_std)


# ---------------------------------------------------------------------------
# Tabular Q-learning over the discretized augmented state
# ---------------------------------------------------------------------------


def discretize_grid_state(cell: int, belief_probs: np.ndarray) -> tuple[int, int, int]:
    """(agent cell, argmax-belief cell, confident flag) key for the Q-table."""
    target = int(np.argmax(belief_probs))
    confident = int(belief_probs[target] >= 0.5)
    return (int(cell), target, confident)


@dataclass
class QTable:
    """One-step TD learner over discrete augmented states."""

    alpha: float = 0.1
    gamma: float = 0.95
    actions: tuple[str, ...] = GRID_ACTIONS
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("learning rate must lie in [0, 1]")

    def value(self, state, action) -> float:
        return self.values.get((state, action), 0.0)

    def best_value(self, state) -> float:
        return max(self.value(state, a) for a in self.actions)

    def greedy_action(self, state) -> str:
        # First-listed action wins ties, which keeps rollouts deterministic.
        return max(self.actions, key=lambda a: (self.value(state, a), -self.actions.index(a)))

    def q_update(self, state, action, reward: float, state_next) -> None:
        target = reward + self.gamma * self.best_value(state_next)
        old = self.value(state, action)
        self.values[(state, action)] = old + self.alpha * (target - old)

    def act(self, state, epsilon: float, rng: np.random.Generator) -> str:
        if epsilon > 0 and rng.random() < epsilon:
            return self.actions[int(rng.integers(len(self.actions)))]
        return self.greedy_action(state)

    # One line per entry: state key fields, action, value.
    def to_text(self) -> str:
        lines = ["qtable v1"]
        for (state, action), value in sorted(self.values.items()):
            key = ",".join(str(k) for k in state)
            lines.append(f"{key}\t{action}\t{value!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, alpha: float = 0.1, gamma: float = 0.95) -> "QTable":
        lines = text.strip().splitlines()
        if not lines or lines[0] != "qtable v1":
            raise ValueError("unrecognized q-table format")
        table = cls(alpha=alpha, gamma=gamma)
        for line in lines[1:]:
            key, action, value = line.split("\t")
            state = tuple(int(k) for k in key.split(","))
            table.values[(state, action)] = float(value)
        return table


def epsilon_schedule(episode: int, total_episodes: int, start: float = 0.2, end: float = 0.01) -> float:
    """Linear decay from ``start`` to ``end`` over the first half of training."""
    half = max(1, total_episodes // 2)
    frac = min(1.0, episode / half)
    return start + frac * (end - start)
