"""Recursive joint inference over segment length and latent context.

At every step, each live hypothesis "the current segment has lasted i steps"
carries a log joint weight log p(runlength = i, data so far) and the context
posterior built from that segment's data.  A new observation either grows a
hypothesis (weight times 1 - hazard times its posterior-predictive
likelihood) or starts a fresh segment (hazard times the prior predictive,
summed over parents).  Normalizing the joint weights gives the filtering
run-length posterior; pairing them with the per-hypothesis context
posteriors gives the mixture belief over the latent context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Literal, Sequence

import numpy as np
from scipy.special import logsumexp

from .envs import TransitionRecord
from .hazard import Hazard

__all__ = [
    "InferenceConfig",
    "RunLengthHypothesis",
    "RunLengthPosterior",
    "BeliefContext",
    "init_posterior",
    "update",
    "posterior_runlength",
    "map_runlength",
    "mixture_belief",
    "map_belief",
    "prune",
    "infer_trajectory",
]


@dataclass(frozen=True)
class InferenceConfig:
    hazard: Hazard
    max_hypotheses: int = 512
    visibility: Literal["deployment", "training"] = "deployment"

    def __post_init__(self):
        if self.max_hypotheses < 1:
            raise ValueError("max_hypotheses must be >= 1")
        if self.visibility not in ("deployment", "training"):
            raise ValueError(f"unknown visibility {self.visibility!r}")


@dataclass(frozen=True)
class RunLengthHypothesis:
    """View of one live hypothesis (for inspection; the filter uses arrays)."""

    runlength: int
    log_joint: float
    stats: Any


@dataclass(frozen=True)
class RunLengthPosterior:
    """Filtering state after ``t`` observations.

    ``runlengths`` is ascending and distinct; ``log_joint[i]`` is the
    unnormalized log p(runlength, data); ``stats`` is the context model's
    batch of per-hypothesis sufficient statistics, row-aligned with
    ``runlengths``.  ``pruned_mass_log`` accumulates the log posterior mass
    discarded by pruning.
    """

    t: int
    runlengths: np.ndarray
    log_joint: np.ndarray
    stats: Any
    pruned_mass_log: float = -np.inf

    @property
    def hypotheses(self) -> list[RunLengthHypothesis]:
        return [
            RunLengthHypothesis(int(r), float(lj), i)
            for i, (r, lj) in enumerate(zip(self.runlengths, self.log_joint))
        ]


@dataclass(frozen=True)
class BeliefContext:
    """Mixture belief over the latent context, marginalizing segment length."""

    weights: np.ndarray
    components: tuple  # ContextPosterior per hypothesis, aligned with weights
    mean: np.ndarray
    std: np.ndarray


def init_posterior(model, config: InferenceConfig) -> RunLengthPosterior:
    """Pre-observation sentinel; the first update forces runlength 1."""
    return RunLengthPosterior(
        t=0,
        runlengths=np.empty(0, dtype=int),
        log_joint=np.empty(0),
        stats=model.fresh_stats(0),
    )


def _step_loglik(stats, rec: TransitionRecord, model, config: InferenceConfig) -> np.ndarray:
    """Per-hypothesis log-likelihood of the new record (plus x in training)."""
    ll = model.predictive_loglik(stats, rec)
    if config.visibility == "training":
        ll = ll + model.obs_context_loglik(stats, rec.obs_context)
    return ll


def _fold(stats, rec: TransitionRecord, model, config: InferenceConfig):
    stats = model.update(stats, rec)
    if config.visibility == "training":
        stats = model.fold_obs_context(stats, rec.obs_context)
    return stats


def update(
    post: RunLengthPosterior,
    rec: TransitionRecord,
    model,
    config: InferenceConfig,
) -> RunLengthPosterior:
    """One step of the forward recursion, then pruning."""
    if rec.t != post.t + 1:
        raise ValueError(f"expected record for step {post.t + 1}, got {rec.t}")
    if config.visibility == "training" and rec.obs_context is None:
        raise ValueError("training visibility requires obs_context on every record")

    fresh = model.fresh_stats(1)
    prior_ll = _step_loglik(fresh, rec, model, config)[0]

    if post.t == 0:
        new = RunLengthPosterior(
            t=1,
            runlengths=np.array([1]),
            log_joint=np.array([prior_ll]),
            stats=_fold(fresh, rec, model, config),
            pruned_mass_log=post.pruned_mass_log,
        )
        return prune(new, config.max_hypotheses)

    h = np.clip(config.hazard.hazard(post.runlengths), 0.0, 1.0)
    pred = _step_loglik(post.stats, rec, model, config)
    with np.errstate(divide="ignore"):
        grow = post.log_joint + np.log1p(-h) + pred
        change = logsumexp(post.log_joint + np.log(h)) + prior_ll

    runlengths = np.concatenate(([1], post.runlengths + 1))
    log_joint = np.concatenate(([change], grow))
    stats = model.concat(
        _fold(fresh, rec, model, config),
        _fold(post.stats, rec, model, config),
    )

    # Hypotheses killed outright by the hazard (h = 0 or 1) carry -inf joint
    # weight; drop them so later arithmetic stays finite.
    alive = np.isfinite(log_joint)
    if not alive.all():
        runlengths = runlengths[alive]
        log_joint = log_joint[alive]
        stats = model.subset(stats, alive)
    if len(log_joint) == 0:
        raise FloatingPointError("all run-length hypotheses have zero weight")

    new = RunLengthPosterior(
        t=post.t + 1,
        runlengths=runlengths,
        log_joint=log_joint,
        stats=stats,
        pruned_mass_log=post.pruned_mass_log,
    )
    return prune(new, config.max_hypotheses)


def prune(post: RunLengthPosterior, max_hypotheses: int) -> RunLengthPosterior:
    """Keep the highest-weight hypotheses, always retaining runlength 1."""
    if max_hypotheses < 1:
        raise ValueError("max_hypotheses must be >= 1")
    n = len(post.runlengths)
    if n <= max_hypotheses:
        return post
    order = np.argsort(post.log_joint)[::-1][:max_hypotheses]
    keep = np.zeros(n, dtype=bool)
    keep[order] = True
    if post.runlengths[0] == 1 and not keep[0]:
        # Swap the weakest survivor for the runlength-1 hypothesis.
        weakest = order[-1]
        keep[weakest] = False
        keep[0] = True
    dropped_mass = logsumexp(post.log_joint[~keep]) - logsumexp(post.log_joint)
    return RunLengthPosterior(
        t=post.t,
        runlengths=post.runlengths[keep],
        log_joint=post.log_joint[keep],
        stats=post.stats if keep.all() else _subset_stats(post.stats, keep),
        pruned_mass_log=float(np.logaddexp(post.pruned_mass_log, dropped_mass)),
    )


def _subset_stats(stats, keep):
    # GaussianStats-like or plain ndarray batches both support fancy indexing.
    if isinstance(stats, np.ndarray):
        return stats[keep]
    from .models import GaussianStats

    if isinstance(stats, GaussianStats):
        return GaussianStats(stats.mean[keep], stats.var[keep], stats.count[keep])
    raise TypeError(f"cannot subset stats of type {type(stats)!r}")


def _require_updated(post: RunLengthPosterior):
    if post.t < 1:
        raise ValueError("run-length posterior queried before the first update")


def posterior_runlength(post: RunLengthPosterior) -> tuple[np.ndarray, np.ndarray]:
    """(runlengths, probabilities), normalized over live hypotheses."""
    _require_updated(post)
    log_norm = post.log_joint - logsumexp(post.log_joint)
    return post.runlengths.copy(), np.exp(log_norm)


def map_runlength(post: RunLengthPosterior) -> int:
    """Argmax run length; exact ties break toward the larger run length."""
    _require_updated(post)
    best = np.flatnonzero(post.log_joint == post.log_joint.max())
    return int(post.runlengths[best].max())


def mixture_moments(post: RunLengthPosterior, model) -> tuple[np.ndarray, np.ndarray]:
    """(mean, std) of the mixture belief via the law of total variance."""
    _require_updated(post)
    _, weights = posterior_runlength(post)
    means, vars_ = model.posterior_moments(post.stats)
    mix_mean = weights @ means
    mix_var = weights @ (vars_ + means**2) - mix_mean**2
    return mix_mean, np.sqrt(np.maximum(mix_var, 0.0))


def mixture_belief(post: RunLengthPosterior, model) -> BeliefContext:
    """Weighted mixture of per-hypothesis context posteriors."""
    _require_updated(post)
    _, weights = posterior_runlength(post)
    components = tuple(model.posterior(post.stats, i) for i in range(len(weights)))
    mean, std = mixture_moments(post, model)
    return BeliefContext(weights=weights, components=components, mean=mean, std=std)


def map_belief(post: RunLengthPosterior, model):
    """Context posterior of the MAP hypothesis only."""
    _require_updated(post)
    target = map_runlength(post)
    i = int(np.flatnonzero(post.runlengths == target)[0])
    return model.posterior(post.stats, i)


def infer_trajectory(
    records: Sequence[TransitionRecord],
    model,
    config: InferenceConfig,
) -> list[dict]:
    """Offline pass over a recorded trajectory; one summary dict per step."""
    post = init_posterior(model, config)
    out = []
    for rec in records:
        post = update(post, rec, model, config)
        runlengths, probs = posterior_runlength(post)
        belief = mixture_belief(post, model)
        out.append(
            {
                "t": post.t,
                "map_runlength": map_runlength(post),
                "runlengths": runlengths.tolist(),
                "probs": probs.tolist(),
                "belief_mean": belief.mean.tolist(),
                "belief_std": belief.std.tolist(),
            }
        )
    return out
