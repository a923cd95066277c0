"""Independent brute-force oracles used to check the forward recursion.

These deliberately avoid the sequential update path: segment marginal
likelihoods are computed by direct enumeration (categorical) or the
closed-form joint-normal formula (Gaussian), and the run-length posterior
by summing over every changepoint pattern.
"""

import itertools
import math

import numpy as np


def categorical_segment_marglik(records, n_cells, p0, p1):
    """log sum_theta (1/K) prod_j p(r_j | s'_j, theta) by direct enumeration."""
    total = 0.0
    for theta in range(n_cells):
        prod = 1.0
        for rec in records:
            p = p0 if rec.state_next == theta else p1
            prod *= p if rec.reward == 1.0 else (1.0 - p)
        total += prod / n_cells
    return math.log(total)


def gaussian_segment_marglik(ys, prior_mean, prior_var, obs_var):
    """Closed-form log N(y; mu0 1, obs_var I + prior_var J) via Sherman-Morrison."""
    ys = np.asarray(ys, dtype=float)
    n = len(ys)
    d = ys - prior_mean
    logdet = n * math.log(obs_var) + math.log1p(n * prior_var / obs_var)
    quad = d @ d / obs_var - (prior_var / (obs_var * (obs_var + n * prior_var))) * d.sum() ** 2
    return -0.5 * (n * math.log(2 * math.pi) + logdet + quad)


def enumerate_runlength_posterior(records, hazard, segment_marglik):
    """p(G_t = i | all records) by summing over all 2^(t-1) changepoint patterns.

    ``segment_marglik(records_block)`` returns the log marginal likelihood of
    a contiguous block under the context prior.  The hazard contributes
    h(runlength) at a change and 1 - h(runlength) at a growth step.
    """
    t = len(records)
    posterior = {}
    for pattern in itertools.product([False, True], repeat=t - 1):
        # pattern[j] is True if a new segment starts at step j + 2
        log_w = 0.0
        runlength = 1
        boundaries = [0]
        dead = False
        for j, change in enumerate(pattern):
            h = float(hazard.hazard(np.array([runlength]))[0])
            p = h if change else 1.0 - h
            if p == 0.0:
                dead = True
                break
            log_w += math.log(p)
            if change:
                boundaries.append(j + 1)
                runlength = 1
            else:
                runlength += 1
        if dead:
            continue
        blocks = [
            records[start:end]
            for start, end in zip(boundaries, boundaries[1:] + [t])
        ]
        log_w += sum(segment_marglik(block) for block in blocks)
        final = t - boundaries[-1]
        posterior[final] = np.logaddexp(posterior.get(final, -np.inf), log_w)

    runlengths = sorted(posterior)
    logs = np.array([posterior[r] for r in runlengths])
    probs = np.exp(logs - np.logaddexp.reduce(logs))
    return np.array(runlengths), probs
