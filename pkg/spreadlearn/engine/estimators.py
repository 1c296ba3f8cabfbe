"""
Spread-likelihood estimators for discrete models: the corrected voting fraction, the
Bernoulli spread log likelihood and a general K-state spread maximum likelihood estimate
computed by EM on the probability simplex.

For a binary channel with P10 = p(x̃=1|x=0) and P01 = p(x̃=0|x=1) the corrupted fraction of
ones is f̃ = P10 + (1 - P10 - P01) θ, so the spread likelihood is maximised at
θ = (f̃ - P10) / (1 - P10 - P01).
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from spreadlearn.engine.errors import ConfigError, DataError, DegenerateChannelError
from spreadlearn.engine.priors import PRIOR_FLOOR, DiscretePrior, floor_and_normalise

logger = logging.getLogger(__name__)

DEGENERACY_TOLERANCE = 1e-9
EM_MAX_ITERATIONS = 500
EM_TOLERANCE = 1e-10
GRID_STEP = 1e-4


@dataclass(frozen=True)
class BernoulliModel:
    theta: float
    clipped: bool = False


@dataclass(frozen=True)
class NoisyFrequency:
    """
    The fraction of ones among n corrupted binary values.
    """
    f_tilde: float
    n: int

    def __post_init__(self):
        if not 0 <= self.f_tilde <= 1:
            raise DataError(f'a frequency must lie in [0, 1], got {self.f_tilde}')

    @classmethod
    def of(cls, values):
        values = np.asarray(values)
        if values.size == 0:
            raise DataError('cannot take the frequency of no values')
        return cls(f_tilde=float(np.mean(values == 1)), n=int(values.size))


@dataclass(frozen=True, eq=False)
class SimplexEstimate:
    q: np.ndarray
    objective: np.ndarray
    iterations: int
    converged: bool
    trace: List[float] = field(default_factory=list)


def _frequency(f_tilde):
    return f_tilde.f_tilde if isinstance(f_tilde, NoisyFrequency) else float(f_tilde)


def voting_estimate(f_tilde, channel):
    """
    The spread maximum likelihood estimate of the clean fraction of ones, clipped to [0, 1].
    """
    f_tilde = _frequency(f_tilde)
    p10, p01 = channel.p_0to1, channel.p_1to0
    denominator = 1.0 - p10 - p01
    if abs(denominator) < DEGENERACY_TOLERANCE:
        raise DegenerateChannelError('the channel output does not depend on its input')
    raw = (f_tilde - p10) / denominator
    theta = min(max(raw, 0.0), 1.0)
    if theta != raw:
        logger.warning('voting estimate %.6f fell outside [0, 1]; clipped to %.1f', raw, theta)
    return BernoulliModel(theta=theta, clipped=theta != raw)


def spread_loglik_bernoulli(theta, f_tilde, channel):
    """
    Average spread log likelihood f̃0 log p̃θ(0) + f̃1 log p̃θ(1). Works elementwise on arrays
    of theta; a term with zero weight contributes nothing.
    """
    f_one = _frequency(f_tilde)
    theta = np.asarray(theta, dtype=float)
    p_one = channel.p_0to1 * (1 - theta) + (1 - channel.p_1to0) * theta
    p_zero = 1.0 - p_one
    terms = []
    for weight, mixture in ((1.0 - f_one, p_zero), (f_one, p_one)):
        if weight == 0:
            continue
        if np.any(mixture <= 0):
            raise DataError('log of a non-positive mixture probability')
        terms.append(weight * np.log(mixture))
    value = sum(terms)
    return float(value) if np.ndim(value) == 0 else value


def grid_argmax_bernoulli(f_tilde, channel, step=GRID_STEP):
    """
    Maximise the Bernoulli spread log likelihood over a θ grid; the arbiter for
    voting_estimate. Grid points where the likelihood is undefined are skipped.
    """
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    f_one = _frequency(f_tilde)
    p_one = channel.p_0to1 * (1 - grid) + (1 - channel.p_1to0) * grid
    with np.errstate(divide='ignore'):
        values = (np.where(f_one > 0, f_one * np.log(p_one), 0.0)
                  + np.where(f_one < 1, (1 - f_one) * np.log(1 - p_one), 0.0))
    return float(grid[np.nanargmax(values)])


def spread_loglik_discrete(q, counts, channel):
    """
    Σ_i counts_i log (P q)_i over the last axis; zero counts contribute nothing.
    """
    counts = np.asarray(counts, dtype=float)
    corrupted = channel.forward(q)
    with np.errstate(divide='ignore', invalid='ignore'):
        terms = np.where(counts > 0, counts * np.log(corrupted), 0.0)
    return terms.sum(axis=-1)


def spread_mle_discrete(counts, channel, strategy='em', max_iterations=EM_MAX_ITERATIONS,
                        tolerance=EM_TOLERANCE):
    """
    Maximise Σ_i counts_i log Σ_j P_ij q_j over the simplex.

    `counts` is a K-vector or a (D, K) batch of independent problems sharing the channel.
    The EM strategy starts from the uniform distribution and stops after `max_iterations` or
    when every problem's per-count objective gains less than `tolerance`. The grid strategy
    (K = 2 only) scans q_1 on a 1e-4 grid.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.shape[-1] != channel.num_states:
        raise DataError(f'expected counts over {channel.num_states} states, got {counts.shape[-1]}')
    totals = counts.sum(axis=-1, keepdims=True)
    if np.any(totals <= 0):
        raise DataError('spread MLE needs a positive total count')
    frequencies = counts / totals

    if strategy == 'grid':
        return _grid_mle(counts, frequencies, channel)
    if strategy != 'em':
        raise ConfigError(f'unknown spread MLE strategy {strategy!r}')

    q = np.full(counts.shape, 1.0 / channel.num_states)
    previous = spread_loglik_discrete(q, frequencies, channel)
    trace = [float(np.sum(previous))]
    converged = False
    iteration = 0
    while iteration < max_iterations:
        iteration += 1
        corrupted = channel.forward(q)
        ratio = np.divide(frequencies, corrupted, out=np.zeros_like(frequencies), where=frequencies > 0)
        q = q * channel.adjoint(ratio)
        q = q / q.sum(axis=-1, keepdims=True)
        current = spread_loglik_discrete(q, frequencies, channel)
        trace.append(float(np.sum(current)))
        if np.all(current - previous < tolerance):
            converged = True
            break
        previous = current
    logger.debug('spread MLE EM stopped after %d iterations (converged=%s)', iteration, converged)
    return SimplexEstimate(q=q, objective=spread_loglik_discrete(q, counts, channel),
                           iterations=iteration, converged=converged, trace=trace)


def _grid_mle(counts, frequencies, channel):
    if channel.num_states != 2 or counts.ndim != 1:
        raise ConfigError('the grid strategy only handles a single two-state problem')
    grid = np.linspace(0.0, 1.0, int(round(1.0 / GRID_STEP)) + 1)
    candidates = np.stack([1.0 - grid, grid], axis=1)
    values = spread_loglik_discrete(candidates, frequencies, channel)
    best = candidates[np.nanargmax(values)]
    return SimplexEstimate(q=best, objective=spread_loglik_discrete(best, counts, channel),
                           iterations=len(grid), converged=True)


def learn_prior_from_marginals(states, channel, floor=PRIOR_FLOOR):
    """
    Learn the factorised prior p(k|d) from corrupted states alone, one spread MLE per
    feature. Needs nothing beyond the single release each owner already made.
    """
    states = channel.check_states(np.asarray(states))
    if states.ndim != 2 or len(states) == 0:
        raise DataError('expected a non-empty N x D matrix of states')
    num_features = states.shape[1]
    offsets = states + np.arange(num_features) * channel.num_states
    counts = np.bincount(offsets.ravel(), minlength=num_features * channel.num_states)
    estimate = spread_mle_discrete(counts.reshape(num_features, channel.num_states), channel)
    return DiscretePrior(floor_and_normalise(estimate.q, floor))
