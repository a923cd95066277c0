"""Segment-aware Bayesian belief inference for piecewise-stable environments."""

from .hazard import ConstantHazard, GaussianLengthHazard
from .envs import (
    BandwidthConfig,
    EpisodeScript,
    GridWorldConfig,
    ScalarStreamConfig,
    Segment,
    TransitionRecord,
    sample_episode_script,
)
from .models import (
    BandwidthCapacityModel,
    CategoricalGoalModel,
    CategoricalPosterior,
    GaussianMeanModel,
    GaussianPosterior,
)
from .inference import (
    BeliefContext,
    InferenceConfig,
    RunLengthPosterior,
    infer_trajectory,
    init_posterior,
    map_belief,
    map_runlength,
    mixture_belief,
    posterior_runlength,
    prune,
    update,
)
from .agents import (
    OracleTracker,
    QTable,
    SegmentedTracker,
    VanillaTracker,
    bandwidth_policy,
    greedy_goal_policy,
    make_tracker,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import compare_runs, detection_delay, run_experiment, write_run

__version__ = "0.1.0"

__all__ = [
    "ConstantHazard",
    "GaussianLengthHazard",
    "BandwidthConfig",
    "EpisodeScript",
    "GridWorldConfig",
    "ScalarStreamConfig",
    "Segment",
    "TransitionRecord",
    "sample_episode_script",
    "BandwidthCapacityModel",
    "CategoricalGoalModel",
    "CategoricalPosterior",
    "GaussianMeanModel",
    "GaussianPosterior",
    "BeliefContext",
    "InferenceConfig",
    "RunLengthPosterior",
    "infer_trajectory",
    "init_posterior",
    "map_belief",
    "map_runlength",
    "mixture_belief",
    "posterior_runlength",
    "prune",
    "update",
    "OracleTracker",
    "QTable",
    "SegmentedTracker",
    "VanillaTracker",
    "bandwidth_policy",
    "greedy_goal_policy",
    "make_tracker",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "compare_runs",
    "detection_delay",
    "run_experiment",
    "write_run",
    "__version__",
]
