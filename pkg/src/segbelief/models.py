"""Exact likelihood models over latent contexts.

Each model exposes a batched sufficient-statistics representation: a stats
object describes one posterior per live segment hypothesis, and updates /
predictive likelihoods are vectorized across hypotheses (a single posterior
is just a batch of one).  All belief arithmetic is in log-space; products of
thousands of per-step likelihoods underflow otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, logsumexp
from scipy.stats import norm

from .envs import ChannelStats, TransitionRecord

__all__ = [
    "CategoricalPosterior",
    "GaussianPosterior",
    "CategoricalGoalModel",
    "GaussianMeanModel",
    "BandwidthCapacityModel",
    "GaussianStats",
    "categorical_update",
    "categorical_predictive_loglik",
    "gaussian_update",
    "gaussian_predictive_loglik",
]


# ---------------------------------------------------------------------------
# Posterior value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CategoricalPosterior:
    """Probability vector over a finite context set (e.g. grid cells)."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError("categorical posterior must sum to 1")

    def mean(self) -> np.ndarray:
        """Per-cell membership probability (the indicator mean)."""
        return self.probs

    def var(self) -> np.ndarray:
        return self.probs * (1.0 - self.probs)


@dataclass(frozen=True)
class GaussianPosterior:
    mean_: float
    var_: float

    def __post_init__(self):
        if self.var_ <= 0:
            raise ValueError("gaussian posterior variance must be positive")

    def mean(self) -> np.ndarray:
        return np.array([self.mean_])

    def var(self) -> np.ndarray:
        return np.array([self.var_])


# ---------------------------------------------------------------------------
# Categorical goal model (grid world)
# ---------------------------------------------------------------------------


def _bernoulli_loglik(reward: float, n_cells: int, cell: int, p0: float, p1: float) -> np.ndarray:
    """log p(reward | goal = theta) for every candidate cell theta."""
    if reward not in (0.0, 1.0):
        raise ValueError(f"grid reward must be 0 or 1, got {reward}")
    with np.errstate(divide="ignore"):
        if reward == 1.0:
            out = np.full(n_cells, np.log(p1))
            out[cell] = np.log(p0)
        else:
            out = np.full(n_cells, np.log1p(-p1))
            out[cell] = np.log1p(-p0)
    return out


def categorical_update(log_belief: np.ndarray, rec: TransitionRecord, p0: float, p1: float) -> np.ndarray:
    """Bayes step b'(theta) ∝ b(theta) p(r | s', theta), renormalized.

    The transition term is omitted: grid dynamics do not depend on the goal.
    Accepts a single belief (K,) or a batch (n, K).
    """
    log_belief = np.asarray(log_belief, dtype=float)
    ll = _bernoulli_loglik(rec.reward, log_belief.shape[-1], rec.state_next, p0, p1)
    out = log_belief + ll
    return out - logsumexp(out, axis=-1, keepdims=True)


def categorical_predictive_loglik(log_belief: np.ndarray, rec: TransitionRecord, p0: float, p1: float):
    """log sum_theta b(theta) p(r | s', theta); batched over beliefs."""
    log_belief = np.asarray(log_belief, dtype=float)
    ll = _bernoulli_loglik(rec.reward, log_belief.shape[-1], rec.state_next, p0, p1)
    return logsumexp(log_belief + ll, axis=-1)


@dataclass(frozen=True)
class CategoricalGoalModel:
    """Exact posterior over the goal cell from Bernoulli reward evidence.

    ``x_noise`` is the mislabel probability of the observable context (the
    goal cell seen in training mode); 0 means the label is exact.
    """

    n_cells: int
    p_goal: float = 0.9
    p_other: float = 0.1
    x_noise: float = 0.0

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("n_cells must be >= 1")
        if not 0.0 <= self.p_other <= self.p_goal <= 1.0:
            raise ValueError("need 0 <= p_other <= p_goal <= 1")
        if not 0.0 <= self.x_noise < 1.0:
            raise ValueError("x_noise must lie in [0, 1)")

    # stats: (n, K) array of normalized log beliefs
    def fresh_stats(self, n: int = 1) -> np.ndarray:
        return np.full((n, self.n_cells), -np.log(self.n_cells))

    def update(self, stats: np.ndarray, rec: TransitionRecord) -> np.ndarray:
        return categorical_update(stats, rec, self.p_goal, self.p_other)

    def predictive_loglik(self, stats: np.ndarray, rec: TransitionRecord) -> np.ndarray:
        return categorical_predictive_loglik(stats, rec, self.p_goal, self.p_other)

    def _x_loglik(self, x: int) -> np.ndarray:
        with np.errstate(divide="ignore"):
            if self.x_noise == 0.0:
                out = np.full(self.n_cells, -np.inf)
                out[x] = 0.0
            else:
                out = np.full(self.n_cells, np.log(self.x_noise / (self.n_cells - 1)))
                out[x] = np.log1p(-self.x_noise)
        return out

    def obs_context_loglik(self, stats: np.ndarray, x: int) -> np.ndarray:
        return logsumexp(stats + self._x_loglik(x), axis=-1)

    def fold_obs_context(self, stats: np.ndarray, x: int) -> np.ndarray:
        out = stats + self._x_loglik(x)
        return out - logsumexp(out, axis=-1, keepdims=True)

    def subset(self, stats: np.ndarray, idx) -> np.ndarray:
        return stats[idx]

    def concat(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.concatenate([a, b], axis=0)

    def posterior(self, stats: np.ndarray, i: int = 0) -> CategoricalPosterior:
        return CategoricalPosterior(np.exp(stats[i]))

    def posterior_moments(self, stats: np.ndarray):
        probs = np.exp(stats)
        return probs, probs * (1.0 - probs)

    def prior_posterior(self) -> CategoricalPosterior:
        return CategoricalPosterior(np.full(self.n_cells, 1.0 / self.n_cells))


# ---------------------------------------------------------------------------
# Conjugate Normal-Normal model (known observation variance)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianStats:
    """Batched Normal posterior over a scalar context mean."""

    mean: np.ndarray
    var: np.ndarray
    count: np.ndarray


def gaussian_update(stats: GaussianStats, y: float, obs_var: float) -> GaussianStats:
    """Standard conjugate update: precisions add, means precision-average."""
    if not np.isfinite(y):
        raise ValueError(f"observation must be finite, got {y}")
    precision = 1.0 / stats.var + 1.0 / obs_var
    var = 1.0 / precision
    mean = var * (stats.mean / stats.var + y / obs_var)
    return GaussianStats(mean=mean, var=var, count=stats.count + 1)


def gaussian_predictive_loglik(stats: GaussianStats, y: float, obs_var: float) -> np.ndarray:
    """Log-density of N(posterior mean, posterior var + obs var) at y."""
    if not np.isfinite(y):
        raise ValueError(f"observation must be finite, got {y}")
    return norm.logpdf(y, loc=stats.mean, scale=np.sqrt(stats.var + obs_var))


@dataclass(frozen=True)
class GaussianMeanModel:
    """Normal-Normal model for a piecewise-constant scalar signal.

    The per-step observation is taken from the record's reward field, which
    is where the scalar-stream environment stores its draw.  ``x_noise_std``
    is the assumed noise on the training-time observable context.
    """

    prior_mean: float = 0.0
    prior_var: float = 1.0
    obs_var: float = 1.0
    x_noise_std: float = 0.1

    def __post_init__(self):
        if self.prior_var <= 0 or self.obs_var <= 0 or self.x_noise_std <= 0:
            raise ValueError("variances must be positive")

    def _y(self, rec: TransitionRecord) -> float:
        return float(rec.reward)

    def fresh_stats(self, n: int = 1) -> GaussianStats:
        return GaussianStats(
            mean=np.full(n, self.prior_mean),
            var=np.full(n, self.prior_var),
            count=np.zeros(n, dtype=int),
        )

    def update(self, stats: GaussianStats, rec: TransitionRecord) -> GaussianStats:
        return gaussian_update(stats, self._y(rec), self.obs_var)

    def predictive_loglik(self, stats: GaussianStats, rec: TransitionRecord) -> np.ndarray:
        return gaussian_predictive_loglik(stats, self._y(rec), self.obs_var)

    def obs_context_loglik(self, stats: GaussianStats, x: float) -> np.ndarray:
        return norm.logpdf(x, loc=stats.mean, scale=np.sqrt(stats.var + self.x_noise_std**2))

    def fold_obs_context(self, stats: GaussianStats, x: float) -> GaussianStats:
        return gaussian_update(stats, float(x), self.x_noise_std**2)

    def subset(self, stats: GaussianStats, idx) -> GaussianStats:
        return GaussianStats(stats.mean[idx], stats.var[idx], stats.count[idx])

    def concat(self, a: GaussianStats, b: GaussianStats) -> GaussianStats:
        return GaussianStats(
            np.concatenate([a.mean, b.mean]),
            np.concatenate([a.var, b.var]),
            np.concatenate([a.count, b.count]),
        )

    def posterior(self, stats: GaussianStats, i: int = 0) -> GaussianPosterior:
        return GaussianPosterior(float(stats.mean[i]), float(stats.var[i]))

    def posterior_moments(self, stats: GaussianStats):
        return stats.mean[:, None], stats.var[:, None]

    def prior_posterior(self) -> GaussianPosterior:
        return GaussianPosterior(self.prior_mean, self.prior_var)


# ---------------------------------------------------------------------------
# Censored-Gaussian capacity model (bandwidth channel)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandwidthCapacityModel:
    """Approximate filter for the channel capacity behind a send rate.

    A lossy step pins the capacity: loss L at send rate a means C is about
    a(1 - L), treated as a Gaussian observation with known variance.  A
    clean step only reveals C >= a; the posterior is truncated to [a, inf)
    and moment-matched back to a Gaussian, and the step's likelihood is the
    posterior-predictive probability of that censoring event.
    """

    prior_mean: float
    prior_var: float
    obs_std: float = 0.2
    x_noise_std: float = 0.1
    loss_eps: float = 1e-6

    def __post_init__(self):
        if self.prior_var <= 0 or self.obs_std <= 0 or self.x_noise_std <= 0:
            raise ValueError("variances must be positive")

    @staticmethod
    def _obs(rec: TransitionRecord) -> tuple[float, float]:
        """(send rate, loss) of the step."""
        ch: ChannelStats = rec.state_next
        return float(ch.send_rate), float(ch.loss)

    def fresh_stats(self, n: int = 1) -> GaussianStats:
        return GaussianStats(
            mean=np.full(n, self.prior_mean),
            var=np.full(n, self.prior_var),
            count=np.zeros(n, dtype=int),
        )

    def update(self, stats: GaussianStats, rec: TransitionRecord) -> GaussianStats:
        a, loss = self._obs(rec)
        if a <= 0:
            return stats
        if loss > self.loss_eps:
            return gaussian_update(stats, a * (1.0 - loss), self.obs_std**2)
        # Censored step: truncate to [a, inf) and moment-match.  The inverse
        # Mills ratio is evaluated through its asymptote for large alpha,
        # where the direct exp form overflows.
        sigma = np.sqrt(stats.var)
        alpha = (a - stats.mean) / sigma
        safe = np.minimum(alpha, 20.0)
        lam = np.where(
            alpha > 20.0,
            alpha + 1.0 / np.maximum(alpha, 1.0),
            np.exp(norm.logpdf(safe) - log_ndtr(-safe)),
        )
        mean = stats.mean + sigma * lam
        var = stats.var * np.clip(1.0 + alpha * lam - lam**2, 1e-6, 1.0)
        var = np.maximum(var, (self.obs_std / 10.0) ** 2)
        return GaussianStats(mean=mean, var=var, count=stats.count + 1)

    def predictive_loglik(self, stats: GaussianStats, rec: TransitionRecord) -> np.ndarray:
        a, loss = self._obs(rec)
        if a <= 0:
            return np.zeros_like(stats.mean)
        scale = np.sqrt(stats.var + self.obs_std**2)
        if loss > self.loss_eps:
            return norm.logpdf(a * (1.0 - loss), loc=stats.mean, scale=scale)
        return log_ndtr((stats.mean - a) / scale)  # P(C >= a)

    def obs_context_loglik(self, stats: GaussianStats, x) -> np.ndarray:
        capacity = float(x[0])  # x is the (capacity, RTT) pair
        return norm.logpdf(capacity, loc=stats.mean, scale=np.sqrt(stats.var + self.x_noise_std**2))

    def fold_obs_context(self, stats: GaussianStats, x) -> GaussianStats:
        return gaussian_update(stats, float(x[0]), self.x_noise_std**2)

    def subset(self, stats: GaussianStats, idx) -> GaussianStats:
        return GaussianStats(stats.mean[idx], stats.var[idx], stats.count[idx])

    def concat(self, a: GaussianStats, b: GaussianStats) -> GaussianStats:
        return GaussianStats(
            np.concatenate([a.mean, b.mean]),
            np.concatenate([a.var, b.var]),
            np.concatenate([a.count, b.count]),
        )

    def posterior(self, stats: GaussianStats, i: int = 0) -> GaussianPosterior:
        return GaussianPosterior(float(stats.mean[i]), float(stats.var[i]))

    def posterior_moments(self, stats: GaussianStats):
        return stats.mean[:, None], stats.var[:, None]

    def prior_posterior(self) -> GaussianPosterior:
        return GaussianPosterior(self.prior_mean, self.prior_var)
