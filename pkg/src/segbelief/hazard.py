"""Segment-length priors and their discrete hazard form.

A hazard gives, for a segment that has currently lasted ``k`` steps, the
probability that the segment ends before the next step.  Two families are
supported: a constant per-step hazard (geometric lengths) and a rounded,
clamped Gaussian length prior tabulated into its conditional-stop form
``h(k) = P(L = k | L >= k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

__all__ = ["ConstantHazard", "GaussianLengthHazard", "Hazard"]


@dataclass(frozen=True)
class ConstantHazard:
    """Constant per-step hazard: segment lengths are Geometric(rate) on {1, 2, ...}."""

    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"hazard rate must lie in [0, 1], got {self.rate}")

    def hazard(self, runlength):
        """Probability the segment ends before the next step, given current length."""
        return np.full(np.shape(runlength), self.rate, dtype=float)

    def sample_length(self, rng: np.random.Generator) -> float:
        """Draw a segment length; infinite when the rate is zero."""
        if self.rate == 0.0:
            return math.inf
        if self.rate == 1.0:
            return 1
        return int(rng.geometric(self.rate))


@dataclass(frozen=True)
class GaussianLengthHazard:
    """Gaussian length prior: lengths are round(N(mean, std)) clamped to >= 1.

    The recursion needs the conditional-stop form h(k) = P(L = k | L >= k),
    which is tabulated from the discretized normal pmf on demand.
    """

    mean: float
    std: float
    _table: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mean <= 0:
            raise ValueError(f"mean segment length must be positive, got {self.mean}")
        if self.std <= 0:
            raise ValueError(f"segment length std must be positive, got {self.std}")

    def _hazard_table(self, upto: int) -> np.ndarray:
        """h(1..upto) as an array, cached on the instance."""
        cached = self._table.get("h")
        if cached is not None and len(cached) >= upto:
            return cached
        k = np.arange(1, upto + 1)
        # pmf(k) = P(k - 0.5 <= N < k + 0.5), with the clamp folding all
        # low-end mass into k = 1.
        upper = norm.cdf(k + 0.5, loc=self.mean, scale=self.std)
        lower = norm.cdf(k - 0.5, loc=self.mean, scale=self.std)
        lower[0] = 0.0
        pmf = upper - lower
        sf = 1.0 - np.concatenate(([0.0], upper[:-1]))  # P(L >= k)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = np.where(sf > 1e-300, pmf / sf, 1.0)
        h = np.clip(h, 0.0, 1.0)
        self._table["h"] = h
        return h

    def hazard(self, runlength):
        runlength = np.asarray(runlength, dtype=int)
        upto = max(1, int(runlength.max()))
        table = self._hazard_table(upto)
        return table[runlength - 1]

    def sample_length(self, rng: np.random.Generator) -> int:
        return max(1, int(np.rint(rng.normal(self.mean, self.std))))


Hazard = ConstantHazard | GaussianLengthHazard
