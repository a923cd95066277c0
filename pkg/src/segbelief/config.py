"""Experiment configuration: TOML sections mirroring the run layout.

Unknown keys are errors; a typo in a config should fail loudly before any
compute is spent.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .envs import BandwidthConfig, GridWorldConfig, ScalarStreamConfig
from .hazard import ConstantHazard, GaussianLengthHazard, Hazard
from .inference import InferenceConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class AgentSettings:
    kind: str = "segmented"  # segmented | vanilla | oracle
    policy: str = "greedy"  # greedy | qlearning (grid); bandwidth uses the rate rule
    use_map: bool = True
    kappa: float = 1.0
    alpha: float = 0.1
    gamma: float = 0.95
    train_episodes: int = 0
    epsilon_start: float = 0.2
    epsilon_end: float = 0.01


@dataclass(frozen=True)
class RunSettings:
    episodes: int = 10
    seed: int = 0
    out: Optional[str] = None
    reset_threshold: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    env_kind: str
    env: GridWorldConfig | BandwidthConfig | ScalarStreamConfig
    inference: InferenceConfig
    agent: AgentSettings
    run: RunSettings
    raw: dict = field(default_factory=dict, repr=False)


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")


def _get(section: dict, key: str, kind, default, where: str):
    if key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r} in [{where}]")
        return default
    value = section[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"key {key!r} in [{where}] must be {kind.__name__}")
    return value


_REQUIRED = object()


def _parse_hazard(section: dict, where: str) -> Hazard:
    _check_keys(section, {"kind", "rate", "mean", "std"}, where)
    kind = _get(section, "kind", str, _REQUIRED, where)
    try:
        if kind == "constant":
            _check_keys(section, {"kind", "rate"}, where)
            return ConstantHazard(_get(section, "rate", float, _REQUIRED, where))
        if kind == "gaussian":
            _check_keys(section, {"kind", "mean", "std"}, where)
            return GaussianLengthHazard(
                _get(section, "mean", float, _REQUIRED, where),
                _get(section, "std", float, _REQUIRED, where),
            )
    except ValueError as exc:
        raise ConfigError(f"invalid hazard in [{where}]: {exc}") from exc
    raise ConfigError(f"unknown hazard kind {kind!r} in [{where}]")


def _parse_environment(section: dict):
    _check_keys(section, {"kind", "grid", "bandwidth", "scalar"}, "environment")
    kind = _get(section, "kind", str, _REQUIRED, "environment")
    sub = section.get(kind, {})
    try:
        if kind == "grid":
            _check_keys(
                sub,
                {"width", "height", "p_goal", "p_other", "horizon", "hazard"},
                "environment.grid",
            )
            return kind, GridWorldConfig(
                width=_get(sub, "width", int, 5, "environment.grid"),
                height=_get(sub, "height", int, 4, "environment.grid"),
                p_goal=_get(sub, "p_goal", float, 0.9, "environment.grid"),
                p_other=_get(sub, "p_other", float, 0.1, "environment.grid"),
                horizon=_get(sub, "horizon", int, 400, "environment.grid"),
                hazard=_parse_hazard(
                    sub.get("hazard", {"kind": "constant", "rate": 1.0 / 80.0}),
                    "environment.grid.hazard",
                ),
            )
        if kind == "bandwidth":
            _check_keys(
                sub,
                {
                    "capacity_min",
                    "capacity_max",
                    "rtt_min",
                    "rtt_max",
                    "horizon",
                    "obs_noise_std",
                    "queue_coeff",
                    "hazard",
                },
                "environment.bandwidth",
            )
            return kind, BandwidthConfig(
                capacity_min=_get(sub, "capacity_min", float, 1.0, "environment.bandwidth"),
                capacity_max=_get(sub, "capacity_max", float, 10.0, "environment.bandwidth"),
                rtt_min=_get(sub, "rtt_min", float, 0.05, "environment.bandwidth"),
                rtt_max=_get(sub, "rtt_max", float, 0.2, "environment.bandwidth"),
                horizon=_get(sub, "horizon", int, 400, "environment.bandwidth"),
                obs_noise_std=_get(sub, "obs_noise_std", float, 0.02, "environment.bandwidth"),
                queue_coeff=_get(sub, "queue_coeff", float, 0.1, "environment.bandwidth"),
                hazard=_parse_hazard(
                    sub.get("hazard", {"kind": "constant", "rate": 1.0 / 80.0}),
                    "environment.bandwidth.hazard",
                ),
            )
        if kind == "scalar":
            _check_keys(
                sub,
                {"prior_mean", "prior_std", "obs_std", "horizon", "hazard"},
                "environment.scalar",
            )
            return kind, ScalarStreamConfig(
                prior_mean=_get(sub, "prior_mean", float, 0.0, "environment.scalar"),
                prior_std=_get(sub, "prior_std", float, 1.0, "environment.scalar"),
                obs_std=_get(sub, "obs_std", float, 0.25, "environment.scalar"),
                horizon=_get(sub, "horizon", int, 1000, "environment.scalar"),
                hazard=_parse_hazard(
                    sub.get("hazard", {"kind": "constant", "rate": 1.0 / 80.0}),
                    "environment.scalar.hazard",
                ),
            )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid [environment.{kind}]: {exc}") from exc
    raise ConfigError(f"unknown environment kind {kind!r}")


def parse_config(data: dict) -> ExperimentConfig:
    _check_keys(data, {"run", "environment", "inference", "agent"}, "<root>")
    if "environment" not in data:
        raise ConfigError("missing [environment] section")

    env_kind, env = _parse_environment(data["environment"])

    inf_section = dict(data.get("inference", {}))
    _check_keys(inf_section, {"hazard", "max_hypotheses", "visibility"}, "inference")
    inf_hazard = (
        _parse_hazard(inf_section["hazard"], "inference.hazard")
        if "hazard" in inf_section
        else env.hazard
    )
    try:
        inf = InferenceConfig(
            hazard=inf_hazard,
            max_hypotheses=_get(inf_section, "max_hypotheses", int, 512, "inference"),
            visibility=_get(inf_section, "visibility", str, "deployment", "inference"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [inference]: {exc}") from exc

    agent_section = dict(data.get("agent", {}))
    _check_keys(
        agent_section,
        {
            "kind",
            "policy",
            "use_map",
            "kappa",
            "alpha",
            "gamma",
            "train_episodes",
            "epsilon_start",
            "epsilon_end",
        },
        "agent",
    )
    agent = AgentSettings(
        kind=_get(agent_section, "kind", str, "segmented", "agent"),
        policy=_get(agent_section, "policy", str, "greedy", "agent"),
        use_map=_get(agent_section, "use_map", bool, True, "agent"),
        kappa=_get(agent_section, "kappa", float, 1.0, "agent"),
        alpha=_get(agent_section, "alpha", float, 0.1, "agent"),
        gamma=_get(agent_section, "gamma", float, 0.95, "agent"),
        train_episodes=_get(agent_section, "train_episodes", int, 0, "agent"),
        epsilon_start=_get(agent_section, "epsilon_start", float, 0.2, "agent"),
        epsilon_end=_get(agent_section, "epsilon_end", float, 0.01, "agent"),
    )
    if agent.kind not in ("segmented", "vanilla", "oracle"):
        raise ConfigError(f"unknown agent kind {agent.kind!r}")
    if agent.policy not in ("greedy", "qlearning", "rate", "random"):
        raise ConfigError(f"unknown agent policy {agent.policy!r}")

    run_section = dict(data.get("run", {}))
    _check_keys(run_section, {"episodes", "seed", "out", "reset_threshold"}, "run")
    run = RunSettings(
        episodes=_get(run_section, "episodes", int, 10, "run"),
        seed=_get(run_section, "seed", int, 0, "run"),
        out=_get(run_section, "out", str, None, "run"),
        reset_threshold=_get(run_section, "reset_threshold", int, 3, "run"),
    )
    if run.episodes < 0:
        raise ConfigError("run.episodes must be >= 0")
    if not -(2**63) <= run.seed < 2**64:
        raise ConfigError("run.seed must fit in 64 bits")

    return ExperimentConfig(
        env_kind=env_kind, env=env, inference=inf, agent=agent, run=run, raw=data
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data)
