"""
Definitions of the corruption channels ("spread noise") a data owner can apply before
releasing a datapoint, the checks that decide whether a channel is valid spread noise, and
the multi-release attack that shows why only one corrupted copy may ever be released.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from spreadlearn.engine import streams
from spreadlearn.engine.data import Reason, SpreadVerdict
from spreadlearn.engine.errors import ConfigError, DataError, DegenerateEvidenceError

logger = logging.getLogger(__name__)

STOCHASTIC_TOLERANCE = 1e-12
SINGULARITY_TOLERANCE = 1e-9


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


class Channel(ABC):
    """
    An abstract base class from which all corruption channels inherit.
    """

    @abstractmethod
    def corrupt_chunk(self, values, rng):
        """
        Corrupt one chunk of values with the given generator.
        """
        pass

    @abstractmethod
    def to_dict(self):
        pass

    @property
    def channel_id(self):
        params = ','.join(f'{key}={value}' for key, value in self.to_dict().items() if key != 'kind')
        return f"{self.to_dict()['kind']}({params})"


class DiscreteStateChannel(Channel):
    """
    A channel over K discrete states, P[i, j] = p(x̃=i | x=j).
    """

    num_states: int

    @abstractmethod
    def likelihood(self, observed):
        """
        Rows p(x̃=observed | x=j) for every clean state j. Output shape is observed.shape + (K,).
        """
        pass

    @abstractmethod
    def forward(self, q):
        """The corrupted distribution P q of clean distribution(s) q over the last axis."""
        pass

    @abstractmethod
    def adjoint(self, r):
        """Pᵀ r over the last axis."""
        pass

    def check_states(self, values):
        values = np.asarray(values)
        if values.size and (not np.issubdtype(values.dtype, np.integer)
                            or values.min() < 0 or values.max() >= self.num_states):
            raise DataError(f'state indices must be integers in [0, {self.num_states})')
        return values

    def sample_posterior(self, observed, prior, rng):
        """
        Draw clean states x ~ p(x̃|x) p(x) for every observed state. `prior` is None (flat) or
        an array of per-feature tables whose leading axes broadcast against `observed`.
        """
        observed = self.check_states(observed)
        rows = self.likelihood(observed)
        if prior is not None:
            rows = rows * np.asarray(prior)
        totals = rows.sum(axis=-1, keepdims=True)
        if np.any(totals <= 0):
            raise DegenerateEvidenceError('an observed state has zero probability under the prior')
        cdf = np.cumsum(rows / totals, axis=-1)
        draws = rng.random(observed.shape)[..., None]
        return np.minimum((draws > cdf).sum(axis=-1), self.num_states - 1)


class DiscreteChannel(DiscreteStateChannel):
    """
    A general column-stochastic corruption matrix.
    """

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 2:
            raise ConfigError('a discrete channel needs a square K x K matrix with K >= 2')
        if np.any(matrix < 0) or np.any(matrix > 1):
            raise ConfigError('channel entries must lie in [0, 1]')
        if np.any(np.abs(matrix.sum(axis=0) - 1) > STOCHASTIC_TOLERANCE):
            raise ConfigError('every column of a channel matrix must sum to 1')
        self.matrix = _frozen(matrix)
        self.num_states = matrix.shape[0]

    def to_matrix(self):
        return self.matrix

    def likelihood(self, observed):
        return self.matrix[np.asarray(observed)]

    def forward(self, q):
        return np.asarray(q) @ self.matrix.T

    def adjoint(self, r):
        return np.asarray(r) @ self.matrix

    def corrupt_chunk(self, values, rng):
        cdf = np.cumsum(self.matrix, axis=0)[:, values].T
        draws = rng.random(len(values))[:, None]
        return np.minimum((draws > cdf).sum(axis=1), self.num_states - 1)

    def to_dict(self):
        return {'kind': 'discrete', 'matrix': self.matrix.tolist()}


class FlipChannel(DiscreteStateChannel):
    """
    Binary label flips: 0 becomes 1 with probability p_0to1 and 1 becomes 0 with p_1to0.
    """

    num_states = 2

    def __init__(self, p_0to1, p_1to0):
        for name, value in (('p_0to1', p_0to1), ('p_1to0', p_1to0)):
            if not 0 <= value <= 1:
                raise ConfigError(f'{name} must lie in [0, 1], got {value}')
        self.p_0to1 = float(p_0to1)
        self.p_1to0 = float(p_1to0)

    @classmethod
    def symmetric(cls, p_flip):
        return cls(p_flip, p_flip)

    @property
    def is_symmetric(self):
        return self.p_0to1 == self.p_1to0

    def to_matrix(self):
        return _frozen([[1 - self.p_0to1, self.p_1to0],
                        [self.p_0to1, 1 - self.p_1to0]])

    def to_discrete(self):
        return DiscreteChannel(self.to_matrix())

    def likelihood(self, observed):
        return self.to_matrix()[np.asarray(observed)]

    def forward(self, q):
        return np.asarray(q) @ self.to_matrix().T

    def adjoint(self, r):
        return np.asarray(r) @ self.to_matrix()

    def corrupt_chunk(self, values, rng):
        flip_probability = np.where(values == 0, self.p_0to1, self.p_1to0)
        flipped = rng.random(len(values)) < flip_probability
        return np.where(flipped, 1 - values, values)

    def to_dict(self):
        if self.is_symmetric:
            return {'kind': 'flip', 'p_flip': self.p_0to1}
        return {'kind': 'flip', 'p_0to1': self.p_0to1, 'p_1to0': self.p_1to0}


class UniformStateChannel(DiscreteStateChannel):
    """
    Keep the state with probability 1 - p_f, otherwise resample it uniformly from the K - 1
    other states. Stored as (K, p_f); the K x K matrix is never materialised unless asked for.
    """

    def __init__(self, num_states, p_f):
        if num_states < 2:
            raise ConfigError('a uniform-state channel needs at least two states')
        if not 0 <= p_f <= 1:
            raise ConfigError(f'p_f must lie in [0, 1], got {p_f}')
        self.num_states = int(num_states)
        self.p_f = float(p_f)

    @property
    def keep(self):
        return 1.0 - self.p_f

    @property
    def move(self):
        return self.p_f / (self.num_states - 1)

    def to_matrix(self):
        matrix = np.full((self.num_states, self.num_states), self.move)
        np.fill_diagonal(matrix, self.keep)
        return _frozen(matrix)

    def likelihood(self, observed):
        observed = np.asarray(observed)
        rows = np.full(observed.shape + (self.num_states,), self.move)
        np.put_along_axis(rows, observed[..., None], self.keep, axis=-1)
        return rows

    def forward(self, q):
        q = np.asarray(q, dtype=float)
        return (self.keep - self.move) * q + self.move * q.sum(axis=-1, keepdims=True)

    # the matrix is symmetric
    adjoint = forward

    def corrupt_chunk(self, values, rng):
        offsets = rng.integers(1, self.num_states, size=values.shape)
        moved = rng.random(values.shape) < self.p_f
        return np.where(moved, (values + offsets) % self.num_states, values)

    def sample_posterior(self, observed, prior, rng):
        """
        Two-branch draw: keep the observed state with its posterior probability, otherwise
        draw from the prior restricted to the other states by inverting its cumulative table.
        `prior` is None or a (D, K) array of tables; `observed` has D as its last axis.
        """
        observed = self.check_states(observed)
        if prior is None:
            # with a flat prior the posterior has exactly the channel's shape
            return self.corrupt_chunk(observed, rng)
        prior = np.asarray(prior, dtype=float)
        num_features = prior.shape[0]
        features = np.broadcast_to(np.arange(num_features), observed.shape)
        p_observed = prior[features, observed]
        keep_mass = self.keep * p_observed
        other_mass = self.move * (1.0 - p_observed)
        total = keep_mass + other_mass
        if np.any(total <= 0):
            raise DegenerateEvidenceError('an observed state has zero probability under the prior')
        kept = rng.random(observed.shape) * total < keep_mass

        cumulative = np.cumsum(prior, axis=1)
        before = cumulative[features, observed] - p_observed
        draws = rng.random(observed.shape) * (1.0 - p_observed)
        targets = np.where(draws < before, draws, draws + p_observed)
        flat = (cumulative + np.arange(num_features)[:, None]).ravel()
        others = np.searchsorted(flat, targets + features, side='right') - features * self.num_states
        others = np.clip(others, 0, self.num_states - 1)
        return np.where(kept, observed, others)

    def to_dict(self):
        return {'kind': 'uniform_state', 'num_states': self.num_states, 'p_f': self.p_f}


class GaussianChannel(Channel):
    """
    Independent additive Gaussian noise with per-dimension variance. A scalar variance
    applies to every dimension.
    """

    def __init__(self, variances):
        variances = np.asarray(variances, dtype=float)
        if variances.ndim > 1 or variances.size == 0 or np.any(variances <= 0):
            raise ConfigError('Gaussian channel variances must be strictly positive')
        self.variances = _frozen(variances)

    @classmethod
    def isotropic(cls, variance):
        return cls(variance)

    def variances_for(self, num_features):
        if self.variances.ndim == 0:
            return np.full(num_features, float(self.variances))
        if self.variances.shape[0] != num_features:
            raise DataError(f'channel has {self.variances.shape[0]} dimensions, data has {num_features}')
        return np.array(self.variances)

    def corrupt_chunk(self, values, rng):
        scale = np.sqrt(self.variances_for(values.shape[-1]))
        return values + rng.standard_normal(values.shape) * scale

    def posterior(self, observed, prior_mean, prior_variance):
        """
        Mean and variance of p(x|x̃) ∝ N(x̃; x, σ²) N(x; μ, σ̄²) per dimension.
        """
        observed = np.asarray(observed, dtype=float)
        variances = self.variances_for(observed.shape[-1])
        precision = 1.0 / variances + 1.0 / prior_variance
        weighted = observed / variances + prior_mean / prior_variance
        return weighted / precision, 1.0 / precision

    def sample_posterior(self, observed, prior_mean, prior_variance, rng):
        mean, variance = self.posterior(observed, prior_mean, prior_variance)
        return mean + rng.standard_normal(mean.shape) * np.sqrt(variance)

    def to_dict(self):
        if self.variances.ndim == 0:
            return {'kind': 'gaussian', 'variance': float(self.variances)}
        return {'kind': 'gaussian', 'variances': self.variances.tolist()}


@dataclass(frozen=True)
class ChannelPair:
    """
    The label channel and input channel applied to one record. Either may be None, meaning
    that part of the record is released unchanged.
    """
    label: Optional[FlipChannel] = None
    inputs: Optional[Channel] = None

    def to_dict(self):
        return {'label': self.label.to_dict() if self.label else None,
                'input': self.inputs.to_dict() if self.inputs else None}


def channel_from_dict(spec):
    """
    Build a channel from its JSON form: {"kind": "flip" | "uniform_state" | "gaussian" |
    "discrete", parameters...}.
    """
    if spec is None:
        return None
    try:
        kind = spec['kind']
        if kind == 'flip':
            if 'p_flip' in spec:
                return FlipChannel.symmetric(spec['p_flip'])
            return FlipChannel(spec['p_0to1'], spec['p_1to0'])
        if kind == 'uniform_state':
            return UniformStateChannel(spec['num_states'], spec['p_f'])
        if kind == 'gaussian':
            return GaussianChannel(spec['variances'] if 'variances' in spec else spec['variance'])
        if kind == 'discrete':
            return DiscreteChannel(spec['matrix'])
    except KeyError as error:
        raise ConfigError(f'channel description is missing {error}') from error
    except TypeError as error:
        raise ConfigError(f'malformed channel description {spec!r}') from error
    raise ConfigError(f'unknown channel kind {spec.get("kind")!r}')


def channels_from_dict(spec):
    """Read {"label": {...}, "input": {...}}; a bare channel is taken as the label channel."""
    if 'kind' in spec:
        spec = {'label': spec}
    label = channel_from_dict(spec.get('label'))
    if label is not None and not isinstance(label, FlipChannel):
        if not (isinstance(label, DiscreteChannel) and label.num_states == 2):
            raise ConfigError('the label channel must be a binary channel')
        matrix = label.to_matrix()
        label = FlipChannel(matrix[1, 0], matrix[0, 1])
    return ChannelPair(label=label, inputs=channel_from_dict(spec.get('input')))


def validate_spread_noise(channel, tol=SINGULARITY_TOLERANCE, allow_passthrough=False):
    """
    Check the sufficient condition for discrete spread noise: every entry strictly positive
    and the matrix invertible (|det| > tol). Gaussian channels are always valid. With
    `allow_passthrough`, a noiseless identity channel is accepted as a passthrough.
    """
    if isinstance(channel, GaussianChannel):
        return SpreadVerdict(Reason.VALID)

    if isinstance(channel, UniformStateChannel):
        # eigenvalues are 1 and (keep - move) with multiplicity K - 1
        if channel.p_f == 0:
            return SpreadVerdict(Reason.PASSTHROUGH if allow_passthrough else Reason.ZERO_ENTRY)
        if channel.keep <= 0 or channel.move <= 0:
            return SpreadVerdict(Reason.ZERO_ENTRY)
        if abs(channel.keep - channel.move) <= tol:
            return SpreadVerdict(Reason.SINGULAR)
        return SpreadVerdict(Reason.VALID)

    matrix = channel.to_matrix()
    if allow_passthrough and np.array_equal(matrix, np.eye(len(matrix))):
        return SpreadVerdict(Reason.PASSTHROUGH)
    if np.any(matrix <= 0):
        return SpreadVerdict(Reason.ZERO_ENTRY)
    if abs(np.linalg.det(matrix)) <= tol:
        return SpreadVerdict(Reason.SINGULAR)
    return SpreadVerdict(Reason.VALID)


def corrupt_discrete(data, channel, seed):
    """
    Replace every state with one draw from the channel column of that state.
    """
    data = channel.check_states(np.asarray(data))
    flat = data.ravel()
    output = np.empty_like(flat)
    for records, rng in streams.chunks(len(flat), seed, 'discrete'):
        output[records] = channel.corrupt_chunk(flat[records], rng)
    return output.reshape(data.shape)


def corrupt_gaussian(data, channel, seed):
    """
    Add independent zero-mean Gaussian noise with the channel's per-dimension variances.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise DataError('Gaussian corruption expects an N x D matrix')
    channel.variances_for(data.shape[1])
    output = np.empty_like(data)
    for records, rng in streams.chunks(len(data), seed, 'gaussian'):
        output[records] = channel.corrupt_chunk(data[records], rng)
    return output


def posterior_over_clean(prior, observations, channel):
    """
    p(x | x̃_1..x̃_M) ∝ p(x) ∏_m p(x̃_m | x): what a collector learns about one owner's clean
    state when that owner released M corrupted copies.
    """
    prior = np.asarray(prior, dtype=float)
    observations = channel.check_states(np.asarray(observations, dtype=int).ravel())
    if prior.shape != (channel.num_states,) or np.any(prior < 0):
        raise DataError('prior must be a non-negative vector over the channel states')
    with np.errstate(divide='ignore'):
        log_posterior = np.log(prior) + np.log(channel.likelihood(observations)).sum(axis=0)
    normaliser = logsumexp(log_posterior)
    if not np.isfinite(normaliser):
        raise DegenerateEvidenceError('observations are impossible under the prior and channel')
    return np.exp(log_posterior - normaliser)


def majority_vote_attack(observations, num_states):
    """
    The collector's simplest guess: the most frequent released state (ties to the lowest).
    """
    counts = np.bincount(np.asarray(observations, dtype=int), minlength=num_states)
    return int(np.argmax(counts))


def concentration_curve(true_state, channel, prior, releases, trials, seed):
    """
    Average posterior mass on the true state after M i.i.d. releases, for each M in `releases`.
    """
    curve = []
    for count in releases:
        rng = streams.generator(seed, 'concentration', count)
        clean = np.full(trials * count, true_state)
        noisy = channel.corrupt_chunk(clean, rng).reshape(trials, count)
        masses = [posterior_over_clean(prior, row, channel)[true_state] for row in noisy]
        curve.append(float(np.mean(masses)))
        logger.debug('posterior mass after %d releases: %.4f', count, curve[-1])
    return np.array(curve)
