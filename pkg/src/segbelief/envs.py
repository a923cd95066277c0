"""Piecewise-stable environments and their generative segment process.

An episode is scripted by a sequence of segments; within a segment a latent
context (goal cell, channel condition, stream mean) is held fixed, and at
each boundary a new context is drawn from its prior.  Agents never see the
script; the oracle baseline and the metrics do.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from .hazard import ConstantHazard, Hazard

__all__ = [
    "Segment",
    "EpisodeScript",
    "TransitionRecord",
    "GridWorldConfig",
    "BandwidthConfig",
    "ScalarStreamConfig",
    "ChannelStats",
    "GRID_ACTIONS",
    "sample_episode_script",
    "grid_reset",
    "grid_step",
    "bandwidth_init",
    "bandwidth_step",
    "scalar_step",
]


@dataclass(frozen=True)
class Segment:
    """One stationary stretch of an episode."""

    start: int  # 1-based first step of the segment
    length: int
    context: Any

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("segment length must be >= 1")


@dataclass(frozen=True)
class EpisodeScript:
    """Ground-truth segmentation of an episode; hidden from agents."""

    segments: tuple[Segment, ...]
    horizon: int

    def __post_init__(self):
        expect = 1
        for seg in self.segments:
            if seg.start != expect:
                raise ValueError("segments must tile the horizon without gaps")
            expect = seg.start + seg.length
        if expect != self.horizon + 1:
            raise ValueError("segment lengths must sum to the horizon")

    def segment_at(self, t: int) -> Segment:
        if not 1 <= t <= self.horizon:
            raise ValueError(f"step {t} outside horizon {self.horizon}")
        for seg in self.segments:
            if seg.start <= t < seg.start + seg.length:
                return seg
        raise AssertionError("unreachable: segments tile the horizon")

    def context_at(self, t: int) -> Any:
        return self.segment_at(t).context

    def runlength_at(self, t: int) -> int:
        """Ground-truth segment length up to and including step t."""
        return t - self.segment_at(t).start + 1

    def boundaries(self) -> list[int]:
        """Start steps of every segment after the first (the changepoints)."""
        return [seg.start for seg in self.segments[1:]]


@dataclass(frozen=True)
class TransitionRecord:
    """One observed environment step: (s_{t-1}, a_{t-1}, r_{t-1}, s_t)."""

    t: int
    state_prev: Any
    action: Any
    reward: float
    state_next: Any
    obs_context: Any = None  # present only under training visibility
    true_runlength: Optional[int] = None  # hidden from agents


def sample_episode_script(
    hazard: Hazard,
    context_prior: Callable[[np.random.Generator], Any],
    horizon: int,
    rng: np.random.Generator,
) -> EpisodeScript:
    """Draw (length, context) pairs until they tile [1, horizon].

    The last segment is truncated at the horizon.  Contexts are i.i.d. from
    the prior.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    segments = []
    start = 1
    while start <= horizon:
        length = hazard.sample_length(rng)
        length = int(min(length, horizon - start + 1))
        segments.append(Segment(start=start, length=length, context=context_prior(rng)))
        start += length
    return EpisodeScript(segments=tuple(segments), horizon=horizon)


# ---------------------------------------------------------------------------
# Dynamic-goal grid world
# ---------------------------------------------------------------------------

GRID_ACTIONS = ("up", "down", "left", "right", "none")


@dataclass(frozen=True)
class GridWorldConfig:
    """Grid world with a hidden goal cell that moves between segments.

    Cells are flat indices: cell = row * width + col.
    """

    width: int = 5
    height: int = 4
    p_goal: float = 0.9
    p_other: float = 0.1
    hazard: Hazard = ConstantHazard(1.0 / 80.0)
    horizon: int = 400

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.width * self.height < 2:
            raise ValueError("grid must contain at least 2 cells")
        if not 0.0 <= self.p_other < self.p_goal <= 1.0:
            raise ValueError("need 0 <= p_other < p_goal <= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def n_cells(self) -> int:
        return self.width * self.height


def grid_reset(cfg: GridWorldConfig, rng: np.random.Generator):
    """Place the agent uniformly at random and script the goal per segment."""
    state = int(rng.integers(cfg.n_cells))
    script = sample_episode_script(
        cfg.hazard,
        lambda r: int(r.integers(cfg.n_cells)),
        cfg.horizon,
        rng,
    )
    return state, script


def _grid_move(cell: int, action: str, width: int, height: int) -> int:
    row, col = divmod(cell, width)
    if action == "up":
        row = max(0, row - 1)
    elif action == "down":
        row = min(height - 1, row + 1)
    elif action == "left":
        col = max(0, col - 1)
    elif action == "right":
        col = min(width - 1, col + 1)
    elif action != "none":
        raise ValueError(f"unknown action {action!r}")
    return row * width + col


def grid_step(
    state: int,
    action: str,
    goal: int,
    cfg: GridWorldConfig,
    rng: np.random.Generator,
    visible: bool = False,
):
    """Move (clamped at the boundary) and draw a Bernoulli reward.

    Returns (next cell, reward in {0, 1}, observable context).  The
    observable context is the goal cell itself, and is None unless
    ``visible`` is set.
    """
    if not 0 <= state < cfg.n_cells:
        raise ValueError(f"state {state} outside grid")
    nxt = _grid_move(state, action, cfg.width, cfg.height)
    p = cfg.p_goal if nxt == goal else cfg.p_other
    reward = float(rng.random() < p)
    return nxt, reward, (goal if visible else None)


# ---------------------------------------------------------------------------
# Piecewise-stable bandwidth channel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelStats:
    """Per-step network statistics visible to the controller."""

    send_rate: float
    recv_rate: float
    recv_rate_smooth: float
    loss: float
    delay: float


# EMA coefficient for the smoothed receive rate.
_SMOOTH = 0.9


@dataclass(frozen=True)
class BandwidthConfig:
    """Memoryless analytic channel with piecewise-stable (capacity, RTT)."""

    capacity_min: float = 1.0
    capacity_max: float = 10.0
    rtt_min: float = 0.05
    rtt_max: float = 0.2
    hazard: Hazard = ConstantHazard(1.0 / 80.0)
    horizon: int = 400
    obs_noise_std: float = 0.02  # relative noise on the receive rate
    queue_coeff: float = 0.1  # delay added per unit utilization

    def __post_init__(self):
        if not 0 < self.capacity_min <= self.capacity_max:
            raise ValueError("need 0 < capacity_min <= capacity_max")
        if not 0 < self.rtt_min <= self.rtt_max:
            raise ValueError("need 0 < rtt_min <= rtt_max")
        if self.obs_noise_std < 0:
            raise ValueError("obs_noise_std must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def context_prior(self, rng: np.random.Generator):
        capacity = float(rng.uniform(self.capacity_min, self.capacity_max))
        rtt = float(rng.uniform(self.rtt_min, self.rtt_max))
        return (capacity, rtt)


def bandwidth_init(cfg: BandwidthConfig, rng: np.random.Generator):
    """Initial channel statistics and the (capacity, RTT) script."""
    script = sample_episode_script(cfg.hazard, cfg.context_prior, cfg.horizon, rng)
    capacity, rtt = script.segments[0].context
    state = ChannelStats(0.0, 0.0, 0.0, 0.0, rtt / 2.0)
    return state, script


def bandwidth_step(
    state: ChannelStats,
    action: float,
    context: tuple[float, float],
    cfg: BandwidthConfig,
    rng: np.random.Generator,
    visible: bool = False,
):
    """Send at ``action`` through a channel with the given (capacity, RTT).

    Reward is 2R/C - (D - RTT/2) - L - 1, so sending exactly at capacity
    with a drained queue scores 1 and sending nothing scores -1.
    """
    if action < 0:
        raise ValueError("send rate must be >= 0")
    capacity, rtt = context
    noise = rng.normal(0.0, cfg.obs_noise_std) if cfg.obs_noise_std > 0 else 0.0
    recv = min(action, capacity) * (1.0 + noise)
    recv = float(np.clip(recv, 0.0, capacity))
    loss = max(0.0, (action - capacity) / action) if action > 0 else 0.0
    delay = rtt / 2.0 + cfg.queue_coeff * (action / capacity)
    reward = 2.0 * recv / capacity - (delay - rtt / 2.0) - loss - 1.0
    smooth = _SMOOTH * state.recv_rate_smooth + (1.0 - _SMOOTH) * recv
    nxt = ChannelStats(
        send_rate=float(action),
        recv_rate=recv,
        recv_rate_smooth=float(smooth),
        loss=float(loss),
        delay=float(delay),
    )
    return nxt, float(reward), (context if visible else None)


# ---------------------------------------------------------------------------
# Synthetic scalar stream (piecewise-constant mean + Gaussian noise)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarStreamConfig:
    """Observations y_t = c + noise, with c redrawn at each changepoint."""

    prior_mean: float = 0.0
    prior_std: float = 1.0
    obs_std: float = 0.25
    hazard: Hazard = ConstantHazard(1.0 / 80.0)
    horizon: int = 1000

    def __post_init__(self):
        if self.prior_std <= 0 or self.obs_std <= 0:
            raise ValueError("prior_std and obs_std must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def context_prior(self, rng: np.random.Generator) -> float:
        return float(rng.normal(self.prior_mean, self.prior_std))


def scalar_step(
    context: float,
    cfg: ScalarStreamConfig,
    rng: np.random.Generator,
    visible: bool = False,
):
    """One noisy observation of the current stream mean."""
    y = float(context + rng.normal(0.0, cfg.obs_std))
    return y, (context if visible else None)
