"""Experiment orchestration: seeding, rollouts, traces, summaries, compare.

Per-episode generators are derived from the master seed with numpy's
SeedSequence entropy mix over (master seed, episode index, stream id), so
episodes are reproducible independently of execution order.  Stream 0 drives
the environment, stream 1 the agent's exploration.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import envs
from .agents import QTable, bandwidth_policy, discretize_grid_state, epsilon_schedule, greedy_goal_policy, make_tracker
from .config import ConfigError, ExperimentConfig
from .envs import BandwidthConfig, ChannelStats, GridWorldConfig, ScalarStreamConfig, TransitionRecord
from .inference import BeliefContext
from .models import BandwidthCapacityModel, CategoricalGoalModel, CategoricalPosterior, GaussianMeanModel

__all__ = [
    "EpisodeSummary",
    "episode_rng",
    "detection_delay",
    "run_experiment",
    "write_run",
    "compare_runs",
    "simulate_trajectories",
    "build_model",
]

SUMMARY_FIELDS = [
    "episode",
    "total_reward",
    "steps",
    "num_true_changepoints",
    "mean_detection_delay",
    "missed_changepoints",
    "mean_belief_mass_on_truth",
]

TOP_K_POSTERIOR = 8


@dataclass(frozen=True)
class EpisodeSummary:
    episode: int
    total_reward: float
    steps: int
    num_true_changepoints: int
    mean_detection_delay: Optional[float]
    missed_changepoints: Optional[int]
    mean_belief_mass_on_truth: Optional[float]


def episode_rng(master_seed: int, episode: int, stream: int = 0) -> np.random.Generator:
    """Deterministic per-(episode, stream) generator."""
    return np.random.default_rng(np.random.SeedSequence([master_seed & (2**64 - 1), episode, stream]))


def detection_delay(
    boundaries: list[int],
    map_series: dict[int, int],
    horizon: int,
    reset_threshold: int = 3,
) -> tuple[list[int], int]:
    """Per-changepoint delays until the MAP run length first drops.

    A changepoint whose segment ends before any drop below the threshold
    counts as missed.  Returns (delays of detected changepoints, missed).
    """
    delays: list[int] = []
    missed = 0
    ends = boundaries[1:] + [horizon + 1]
    for t0, t_end in zip(boundaries, ends):
        for d in range(t_end - t0):
            if map_series.get(t0 + d, horizon + 1) <= reset_threshold:
                delays.append(d)
                break
        else:
            missed += 1
    return delays, missed


def build_model(cfg: ExperimentConfig):
    """Context model matching the environment family."""
    env = cfg.env
    if isinstance(env, GridWorldConfig):
        return CategoricalGoalModel(env.n_cells, env.p_goal, env.p_other)
    if isinstance(env, ScalarStreamConfig):
        return GaussianMeanModel(
            prior_mean=env.prior_mean,
            prior_var=env.prior_std**2,
            obs_var=env.obs_std**2,
        )
    if isinstance(env, BandwidthConfig):
        mid = 0.5 * (env.capacity_min + env.capacity_max)
        spread = max(env.capacity_max - env.capacity_min, 1e-3)
        return BandwidthCapacityModel(
            prior_mean=mid,
            prior_var=spread**2 / 12.0,
            obs_std=max(0.05 * mid, 3.0 * env.obs_noise_std * mid, 1e-3),
        )
    raise ConfigError(f"no model for environment {type(env).__name__}")


def _belief_probs(belief) -> np.ndarray:
    """Categorical probability vector out of any belief representation."""
    if isinstance(belief, CategoricalPosterior):
        return belief.probs
    if isinstance(belief, BeliefContext):
        return belief.mean
    raise TypeError(f"not a categorical belief: {type(belief).__name__}")


def _belief_mean_std(belief) -> tuple[float, float]:
    if isinstance(belief, BeliefContext):
        return float(belief.mean[0]), float(belief.std[0])
    return float(belief.mean()[0]), float(np.sqrt(belief.var()[0]))


def _run_grid_episode(
    cfg: ExperimentConfig,
    episode: int,
    qtable: Optional[QTable],
    epsilon: float,
    collect_trace: bool,
):
    env: GridWorldConfig = cfg.env
    env_rng = episode_rng(cfg.run.seed, episode, 0)
    agent_rng = episode_rng(cfg.run.seed, episode, 1)
    visible = cfg.inference.visibility == "training"

    state, script = envs.grid_reset(env, env_rng)
    model = build_model(cfg)
    tracker = make_tracker(
        cfg.agent.kind, model, cfg.inference, script, use_map=cfg.agent.use_map
    )

    traces = []
    total_reward = 0.0
    mass_on_truth = []
    map_series: dict[int, int] = {}
    include_full_belief = env.n_cells <= 64

    for t in range(1, env.horizon + 1):
        probs = _belief_probs(tracker.belief())
        goal = script.context_at(t)
        if qtable is not None:
            key = discretize_grid_state(state, probs)
            action = qtable.act(key, epsilon, agent_rng)
        else:
            action = greedy_goal_policy(state, probs, env.width)
        nxt, reward, x = envs.grid_step(state, action, goal, env, env_rng, visible=visible)
        rec = TransitionRecord(
            t=t,
            state_prev=state,
            action=action,
            reward=reward,
            state_next=nxt,
            obs_context=x,
            true_runlength=script.runlength_at(t),
        )
        tracker.update(rec)
        probs_after = _belief_probs(tracker.belief())
        if qtable is not None:
            key_next = discretize_grid_state(nxt, probs_after)
            qtable.q_update(key, action, reward, key_next)

        total_reward += reward
        mass_on_truth.append(float(probs_after[goal]))
        g_map = tracker.map_runlength()
        if g_map is not None:
            map_series[t] = g_map

        if collect_trace:
            top = tracker.runlength_posterior()
            row = {
                "episode": episode,
                "t": t,
                "state": state,
                "action": action,
                "reward": reward,
                "obs_context": x,
                "true_runlength": script.runlength_at(t),
                "inferred_runlength_map": g_map,
                "belief_mass_on_truth": round(float(probs_after[goal]), 12),
                "top_k_runlength_posterior": _top_k(top),
            }
            if include_full_belief:
                row["belief_full"] = [round(float(p), 12) for p in probs_after]
            traces.append(row)
        state = nxt

    boundaries = script.boundaries()
    if map_series:
        delays, missed = detection_delay(
            boundaries, map_series, env.horizon, cfg.run.reset_threshold
        )
        mean_delay = float(np.mean(delays)) if delays else None
    else:
        mean_delay, missed = None, None

    summary = EpisodeSummary(
        episode=episode,
        total_reward=total_reward,
        steps=env.horizon,
        num_true_changepoints=len(boundaries),
        mean_detection_delay=mean_delay,
        missed_changepoints=missed,
        mean_belief_mass_on_truth=float(np.mean(mass_on_truth)),
    )
    return traces, summary


def _run_bandwidth_episode(cfg: ExperimentConfig, episode: int, collect_trace: bool):
    env: BandwidthConfig = cfg.env
    env_rng = episode_rng(cfg.run.seed, episode, 0)
    visible = cfg.inference.visibility == "training"

    state, script = envs.bandwidth_init(env, env_rng)
    model = build_model(cfg)
    tracker = make_tracker(
        cfg.agent.kind, model, cfg.inference, script, use_map=cfg.agent.use_map
    )

    traces = []
    total_reward = 0.0
    map_series: dict[int, int] = {}

    for t in range(1, env.horizon + 1):
        mean, std = _belief_mean_std(tracker.belief())
        action = bandwidth_policy(mean, std, cfg.agent.kappa)
        context = script.context_at(t)
        nxt, reward, x = envs.bandwidth_step(state, action, context, env, env_rng, visible=visible)
        rec = TransitionRecord(
            t=t,
            state_prev=state,
            action=action,
            reward=reward,
            state_next=nxt,
            obs_context=x,
            true_runlength=script.runlength_at(t),
        )
        tracker.update(rec)
        total_reward += reward
        g_map = tracker.map_runlength()
        if g_map is not None:
            map_series[t] = g_map

        if collect_trace:
            mean_after, std_after = _belief_mean_std(tracker.belief())
            traces.append(
                {
                    "episode": episode,
                    "t": t,
                    "state": _channel_to_list(state),
                    "action": round(action, 12),
                    "reward": round(reward, 12),
                    "obs_context": list(x) if x is not None else None,
                    "true_runlength": script.runlength_at(t),
                    "inferred_runlength_map": g_map,
                    "belief_mean": round(mean_after, 12),
                    "belief_std": round(std_after, 12),
                    "top_k_runlength_posterior": _top_k(tracker.runlength_posterior()),
                }
            )
        state = nxt

    boundaries = script.boundaries()
    if map_series:
        delays, missed = detection_delay(
            boundaries, map_series, env.horizon, cfg.run.reset_threshold
        )
        mean_delay = float(np.mean(delays)) if delays else None
    else:
        mean_delay, missed = None, None

    summary = EpisodeSummary(
        episode=episode,
        total_reward=total_reward,
        steps=env.horizon,
        num_true_changepoints=len(boundaries),
        mean_detection_delay=mean_delay,
        missed_changepoints=missed,
        mean_belief_mass_on_truth=None,
    )
    return traces, summary


def _channel_to_list(ch: ChannelStats) -> list[float]:
    return [
        round(ch.send_rate, 12),
        round(ch.recv_rate, 12),
        round(ch.recv_rate_smooth, 12),
        round(ch.loss, 12),
        round(ch.delay, 12),
    ]


def _top_k(posterior) -> Optional[list[list[float]]]:
    if posterior is None:
        return None
    runlengths, probs = posterior
    order = np.argsort(probs)[::-1][:TOP_K_POSTERIOR]
    return [[int(runlengths[i]), round(float(probs[i]), 12)] for i in sorted(order)]


def run_experiment(cfg: ExperimentConfig):
    """All episodes of a config: (trace rows, episode summaries).

    Q-learning agents first run ``agent.train_episodes`` learning episodes
    (traced and summarized episodes are the final frozen-policy block).
    """
    qtable = None
    if cfg.env_kind == "grid" and cfg.agent.policy == "qlearning":
        qtable = QTable(alpha=cfg.agent.alpha, gamma=cfg.agent.gamma)
        for episode in range(cfg.agent.train_episodes):
            eps = epsilon_schedule(
                episode, cfg.agent.train_episodes, cfg.agent.epsilon_start, cfg.agent.epsilon_end
            )
            # Training episodes use a disjoint seed block.
            _run_grid_episode(cfg, 1_000_000 + episode, qtable, eps, collect_trace=False)
        qtable = QTable(alpha=0.0, gamma=cfg.agent.gamma, values=dict(qtable.values))

    traces = []
    summaries = []
    for episode in range(cfg.run.episodes):
        if cfg.env_kind == "grid":
            ep_traces, summary = _run_grid_episode(cfg, episode, qtable, 0.0, collect_trace=True)
        elif cfg.env_kind == "bandwidth":
            ep_traces, summary = _run_bandwidth_episode(cfg, episode, collect_trace=True)
        else:
            raise ConfigError(f"run does not support environment kind {cfg.env_kind!r}")
        traces.extend(ep_traces)
        summaries.append(summary)
    return traces, summaries


# ---------------------------------------------------------------------------
# Run directories
# ---------------------------------------------------------------------------


def write_run(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Execute the config and write trace.jsonl, summary.csv, meta.json."""
    traces, summaries = run_experiment(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "trace.jsonl", "w") as fh:
        for row in traces:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for summary in summaries:
            writer.writerow({k: ("" if v is None else v) for k, v in asdict(summary).items()})

    meta = {
        "seed": cfg.run.seed,
        "episodes": cfg.run.episodes,
        "environment": cfg.raw.get("environment", {"kind": cfg.env_kind}),
        "agent_kind": cfg.agent.kind,
        "agent_policy": cfg.agent.policy,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return out


def _load_run(run_dir: Path) -> dict:
    try:
        meta = json.loads((run_dir / "meta.json").read_text())
        summaries = list(csv.DictReader(io.StringIO((run_dir / "summary.csv").read_text())))
        traces = [
            json.loads(line)
            for line in (run_dir / "trace.jsonl").read_text().splitlines()
            if line
        ]
    except FileNotFoundError as exc:
        raise OSError(f"{run_dir} is not a completed run directory: {exc}") from exc
    return {"dir": run_dir, "meta": meta, "summaries": summaries, "traces": traces}


def compare_runs(run_dirs: list[str | Path]) -> dict:
    """Cross-run report; refuses runs over different environment seed streams."""
    if len(run_dirs) < 2:
        raise ValueError("compare needs at least two run directories")
    runs = [_load_run(Path(d)) for d in run_dirs]
    reference = runs[0]["meta"]
    for run in runs[1:]:
        meta = run["meta"]
        if meta["seed"] != reference["seed"] or meta["environment"] != reference["environment"]:
            raise ValueError(
                f"runs are not comparable: {run['dir']} was generated with a different "
                "environment seed stream or environment config than "
                f"{runs[0]['dir']} (seed/environment mismatch)"
            )

    report: dict = {"runs": []}
    for run in runs:
        rewards = np.array([float(s["total_reward"]) for s in run["summaries"]])
        delays = [
            float(s["mean_detection_delay"])
            for s in run["summaries"]
            if s["mean_detection_delay"] not in ("", None)
        ]
        masses = [
            float(s["mean_belief_mass_on_truth"])
            for s in run["summaries"]
            if s["mean_belief_mass_on_truth"] not in ("", None)
        ]
        report["runs"].append(
            {
                "dir": str(run["dir"]),
                "agent": f"{run['meta']['agent_kind']}/{run['meta']['agent_policy']}",
                "episodes": len(rewards),
                "mean_total_reward": float(rewards.mean()) if len(rewards) else None,
                "stderr_total_reward": (
                    float(rewards.std(ddof=1) / np.sqrt(len(rewards))) if len(rewards) > 1 else 0.0
                ),
                "mean_detection_delay": float(np.mean(delays)) if delays else None,
                "mean_belief_mass_on_truth": float(np.mean(masses)) if masses else None,
            }
        )

    # Per-step MAP-runlength agreement across run pairs, where both inferred.
    agreements = {}
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            key_i = {
                (row["episode"], row["t"]): row.get("inferred_runlength_map")
                for row in runs[i]["traces"]
            }
            both = 0
            agree = 0
            for row in runs[j]["traces"]:
                other = key_i.get((row["episode"], row["t"]))
                mine = row.get("inferred_runlength_map")
                if other is not None and mine is not None:
                    both += 1
                    agree += other == mine
            if both:
                agreements[f"{run_dirs[i]} vs {run_dirs[j]}"] = agree / both
    report["map_runlength_agreement"] = agreements
    return report


def format_report(report: dict) -> str:
    lines = [
        f"{'run':40s} {'episodes':>8s} {'reward':>12s} {'stderr':>10s} {'delay':>8s} {'mass':>8s}"
    ]
    for entry in report["runs"]:
        delay = f"{entry['mean_detection_delay']:.2f}" if entry["mean_detection_delay"] is not None else "-"
        mass = (
            f"{entry['mean_belief_mass_on_truth']:.3f}"
            if entry["mean_belief_mass_on_truth"] is not None
            else "-"
        )
        lines.append(
            f"{entry['dir'][:40]:40s} {entry['episodes']:8d} "
            f"{entry['mean_total_reward']:12.3f} {entry['stderr_total_reward']:10.3f} "
            f"{delay:>8s} {mass:>8s}"
        )
    for pair, rate in report["map_runlength_agreement"].items():
        lines.append(f"MAP-runlength agreement {pair}: {rate:.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Offline trajectory generation (the `simulate` subcommand)
# ---------------------------------------------------------------------------


def simulate_trajectories(cfg: ExperimentConfig) -> list[dict]:
    """Roll out episodes under a simple scripted/random policy."""
    rows = []
    visible = cfg.inference.visibility == "training"
    for episode in range(cfg.run.episodes):
        env_rng = episode_rng(cfg.run.seed, episode, 0)
        policy_rng = episode_rng(cfg.run.seed, episode, 1)
        if cfg.env_kind == "grid":
            env: GridWorldConfig = cfg.env
            state, script = envs.grid_reset(env, env_rng)
            for t in range(1, env.horizon + 1):
                action = envs.GRID_ACTIONS[int(policy_rng.integers(len(envs.GRID_ACTIONS)))]
                nxt, reward, x = envs.grid_step(
                    state, action, script.context_at(t), env, env_rng, visible=visible
                )
                rows.append(
                    {
                        "episode": episode,
                        "t": t,
                        "state_prev": state,
                        "action": action,
                        "reward": reward,
                        "state_next": nxt,
                        "obs_context": x,
                        "true_runlength": script.runlength_at(t),
                    }
                )
                state = nxt
        elif cfg.env_kind == "bandwidth":
            env = cfg.env
            state, script = envs.bandwidth_init(env, env_rng)
            for t in range(1, env.horizon + 1):
                action = float(policy_rng.uniform(0.0, 1.2 * env.capacity_max))
                nxt, reward, x = envs.bandwidth_step(
                    state, action, script.context_at(t), env, env_rng, visible=visible
                )
                rows.append(
                    {
                        "episode": episode,
                        "t": t,
                        "state_prev": _channel_to_list(state),
                        "action": round(action, 12),
                        "reward": round(reward, 12),
                        "state_next": _channel_to_list(nxt),
                        "obs_context": list(x) if x is not None else None,
                        "true_runlength": script.runlength_at(t),
                    }
                )
                state = nxt
        elif cfg.env_kind == "scalar":
            env = cfg.env
            script = envs.sample_episode_script(env.hazard, env.context_prior, env.horizon, env_rng)
            for t in range(1, env.horizon + 1):
                y, x = envs.scalar_step(script.context_at(t), env, env_rng, visible=visible)
                rows.append(
                    {
                        "episode": episode,
                        "t": t,
                        "state_prev": 0,
                        "action": None,
                        "reward": round(y, 12),
                        "state_next": 0,
                        "obs_context": x,
                        "true_runlength": script.runlength_at(t),
                    }
                )
        else:
            raise ConfigError(f"unknown environment kind {cfg.env_kind!r}")
    return rows


def record_from_row(row: dict, env_kind: str) -> TransitionRecord:
    """Rebuild a TransitionRecord from a trajectory JSONL row."""
    state_prev, state_next = row["state_prev"], row["state_next"]
    obs = row.get("obs_context")
    if env_kind == "bandwidth":
        state_prev = ChannelStats(*state_prev)
        state_next = ChannelStats(*state_next)
        obs = tuple(obs) if obs is not None else None
    return TransitionRecord(
        t=row["t"],
        state_prev=state_prev,
        action=row.get("action"),
        reward=float(row["reward"]),
        state_next=state_next,
        obs_context=obs,
        true_runlength=row.get("true_runlength"),
    )
