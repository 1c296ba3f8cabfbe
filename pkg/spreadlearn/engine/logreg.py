"""
Logistic regression p(c|x) = φ((2c - 1) θᵀx), trained either on a dataset directly or, for
corrupted releases, by maximising the spread likelihood with an importance-sampled EM:

  E-step  draw S pairs (c^s, x^s) per record from ρ(c|c̃) ρ(x|x̃) and weight them by
          w(s|n) ∝ φ((2c^s - 1) θᵀx^s);
  M-step  one gradient ascent (or Newton) step on the weighted log likelihood (the class
          energy) and, when the prior is learned, the closed-form update of the prior tables.

When the inputs are released clean only the label is hidden, and both of its values are
enumerated with their exact posterior weights instead of being sampled.

Stopping is decided on the label log likelihood of a monitor batch whose random numbers are
fixed for the whole run, so the decision sees the model change and not the sampling noise.
"""

import itertools
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Optional, Union

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from spreadlearn.engine import streams
from spreadlearn.engine.channels import (ChannelPair, DiscreteStateChannel, GaussianChannel,
                                         validate_spread_noise)
from spreadlearn.engine.datasets import LabeledDataset, encode_inputs
from spreadlearn.engine.errors import (ConfigError, DataError, DegenerateChannelError,
                                       NumericalError)
from spreadlearn.engine.estimators import learn_prior_from_marginals
from spreadlearn.engine.priors import (GAUSSIAN_PRIOR_MEAN, GAUSSIAN_PRIOR_VARIANCE, PRIOR_FLOOR,
                                       DiscretePrior, GaussianPrior, prior_from_dict)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 2
DEFAULT_LEARNING_RATE = 0.2
DEFAULT_ITERATIONS = 400
DEFAULT_TOLERANCE = 1e-7
SMOOTHING_WINDOW = 10
STOP_PATIENCE = 3
INIT_SCALE = 0.01
NEWTON_RIDGE = 1e-8
MAX_ENUMERATED_STATES = 4096
M_STEPS = ('gradient', 'newton')


class PriorMode(Enum):
    FLAT = 'flat'
    LEARNED = 'learned'
    TRUE = 'fixed-true'
    GAUSSIAN = 'gaussian'
    PRELEARNED = 'pre-learned'


@dataclass(frozen=True, eq=False)
class LogregModel:
    """
    Class weights θ_c, the last entry multiplying the constant bias feature.
    """
    theta_c: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta_c, dtype=float)
        if theta.ndim != 1 or not np.all(np.isfinite(theta)):
            raise NumericalError('class weights must be a finite vector')
        theta.setflags(write=False)
        object.__setattr__(self, 'theta_c', theta)

    @staticmethod
    def zeros(num_features):
        return LogregModel(np.zeros(num_features + 1))

    @property
    def num_features(self):
        return self.theta_c.shape[0] - 1


@dataclass(frozen=True, eq=False)
class ImportanceBatch:
    """
    S weighted samples per record: labels (N, S), encoded inputs (N, S, D + 1), weights (N, S)
    with rows on the simplex, and the sampled discrete states (N, S, D) when inputs are discrete.
    `log_mass` is the log proposal mass of each entry; None means every entry carries 1/S.
    """
    labels: np.ndarray
    inputs: np.ndarray
    weights: np.ndarray
    states: Optional[np.ndarray] = None
    log_mass: Optional[np.ndarray] = None

    @property
    def num_records(self):
        return self.weights.shape[0]

    @property
    def num_samples(self):
        return self.weights.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    samples: int = DEFAULT_SAMPLES
    learning_rate: float = DEFAULT_LEARNING_RATE
    max_outer_iters: int = DEFAULT_ITERATIONS
    seed: int = 0
    prior_mode: PriorMode = PriorMode.FLAT
    tolerance: float = DEFAULT_TOLERANCE
    window: int = SMOOTHING_WINDOW
    prior_floor: float = PRIOR_FLOOR
    gaussian_prior_mean: float = GAUSSIAN_PRIOR_MEAN
    gaussian_prior_variance: float = GAUSSIAN_PRIOR_VARIANCE
    m_step: str = 'gradient'
    patience: int = STOP_PATIENCE

    def __post_init__(self):
        if isinstance(self.prior_mode, str):
            object.__setattr__(self, 'prior_mode', _prior_mode(self.prior_mode))
        if self.samples < 1:
            raise ConfigError('at least one importance sample per record is needed')
        if self.learning_rate <= 0:
            raise ConfigError('the learning rate must be positive')
        if self.max_outer_iters < 1 or self.window < 1 or self.patience < 1:
            raise ConfigError('iteration counts must be positive')
        if self.m_step not in M_STEPS:
            raise ConfigError(f'm_step must be one of {M_STEPS}, got {self.m_step!r}')
        if self.gaussian_prior_variance <= 0:
            raise ConfigError('the Gaussian prior variance must be positive')

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f'unknown training options {sorted(unknown)}')
        return cls(**values)

    def to_dict(self):
        values = asdict(self)
        values['prior_mode'] = self.prior_mode.value
        return values


def _prior_mode(name):
    aliases = {'learn': PriorMode.LEARNED, 'true': PriorMode.TRUE, 'prelearn': PriorMode.PRELEARNED}
    if name in aliases:
        return aliases[name]
    try:
        return PriorMode(name)
    except ValueError:
        raise ConfigError(f'unknown prior mode {name!r}') from None


@dataclass(frozen=True, eq=False)
class TrainResult:
    model: LogregModel
    prior: Optional[Union[DiscretePrior, GaussianPrior]]
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    loglik_trace: List[float] = field(default_factory=list)

    @property
    def final_energy(self):
        return self.trace[-1] if self.trace else float('nan')

    @property
    def final_loglik(self):
        return self.loglik_trace[-1] if self.loglik_trace else float('nan')

    def to_dict(self, config=None):
        return {
            'theta_c': self.model.theta_c.tolist(),
            'prior': self.prior.to_dict() if self.prior is not None else None,
            'config': config.to_dict() if config is not None else None,
            'final_energy': self.final_energy,
            'final_loglik': self.final_loglik,
            'iterations': self.iterations,
            'converged': self.converged,
        }

    @classmethod
    def from_dict(cls, values):
        """A result read back from a model file; the traces are not stored there."""
        if 'theta_c' not in values:
            raise DataError('the model file has no theta_c')
        try:
            prior = prior_from_dict(values.get('prior'))
        except (KeyError, TypeError, ValueError) as error:
            raise DataError(f'malformed prior in model file: {error}') from error
        return cls(model=LogregModel(values['theta_c']), prior=prior,
                   iterations=int(values.get('iterations', 0)), converged=bool(values.get('converged', False)))


def _check_width(model, design):
    if design.shape[-1] != model.theta_c.shape[0]:
        raise DataError(f'model expects {model.num_features} features, data has {design.shape[-1] - 1}')


def logistic_loglik(model, data: LabeledDataset):
    """
    (1/N) Σ_n log φ((2c_n - 1) θᵀx_n). The input-model term is not included.
    """
    design = data.design()
    _check_width(model, design)
    signs = 2 * data.labels - 1
    return float(np.mean(log_expit(signs * (design @ model.theta_c))))


def predict(model, features):
    """
    p(c=1|x) = φ(θᵀx) for encoded features; the bias column is appended when missing.
    """
    features = np.asarray(features, dtype=float)
    if features.shape[-1] == model.num_features:
        features = np.concatenate([features, np.ones(features.shape[:-1] + (1,))], axis=-1)
    _check_width(model, features)
    return expit(features @ model.theta_c)


def _initial_model(num_features, seed):
    rng = streams.generator(seed, 'init')
    return LogregModel(INIT_SCALE * rng.standard_normal(num_features + 1))


def _smoothed_gain_below(trace, window, tolerance):
    if len(trace) < 2 * window:
        return False
    recent = np.mean(trace[-window:])
    earlier = np.mean(trace[-2 * window:-window])
    return recent - earlier < tolerance


def _newton_direction(inputs, curvature, gradient):
    """
    Solve (H + ridge I) d = g with H = Σ curvature · x xᵀ over the leading axes of `inputs`.
    """
    design = inputs.reshape(-1, inputs.shape[-1])
    scaled = design * np.sqrt(curvature.reshape(-1, 1))
    hessian = scaled.T @ scaled + NEWTON_RIDGE * np.eye(design.shape[-1])
    try:
        return np.linalg.solve(hessian, gradient)
    except np.linalg.LinAlgError as error:
        raise NumericalError(f'Newton step failed: {error}') from error


def train_logreg(data: LabeledDataset, config: TrainConfig = TrainConfig()):
    """
    Standard full-batch training on the logistic log likelihood of `data`, whatever its
    provenance: gradient ascent by default, iteratively reweighted least squares when
    `config.m_step` is 'newton'. Clean training and the naive noisy baseline both use this.
    """
    design = data.design()
    signs = 2 * data.labels - 1
    theta = np.array(_initial_model(data.num_features, config.seed).theta_c)
    trace = []
    streak = 0
    for iteration in range(config.max_outer_iters):
        margins = signs * (design @ theta)
        value = float(np.mean(log_expit(margins)))
        if not np.isfinite(value):
            raise NumericalError('log likelihood became non-finite', iteration=iteration,
                                 theta_norm=float(np.linalg.norm(theta)))
        trace.append(value)
        gradient = design.T @ (signs * expit(-margins)) / data.num_records
        if config.m_step == 'newton':
            probabilities = expit(margins)
            gradient = _newton_direction(design, probabilities * (1 - probabilities) / data.num_records,
                                         gradient)
        theta = theta + config.learning_rate * gradient
        streak = streak + 1 if _smoothed_gain_below(trace, config.window, config.tolerance) else 0
        if streak >= config.patience:
            break
    logger.debug('logistic regression stopped after %d iterations, loglik %.6f', len(trace), trace[-1])
    return TrainResult(model=LogregModel(theta), prior=None, trace=trace, iterations=len(trace),
                       converged=streak >= config.patience, loglik_trace=list(trace))


def _check_prior(prior, inputs, domain):
    if isinstance(inputs, GaussianChannel):
        if not isinstance(prior, GaussianPrior):
            raise ConfigError('Gaussian input noise needs a Gaussian prior')
    elif domain.is_discrete and not isinstance(prior, DiscretePrior):
        raise ConfigError('discrete inputs need a discrete prior')


def importance_weights(log_phi, log_mass=None):
    """
    Self-normalised weights over the last axis, w(s|n) ∝ m(s|n) φ(s|n), where m is the
    proposal mass of each entry (uniform when `log_mass` is None).
    """
    scores = np.asarray(log_phi, dtype=float)
    if log_mass is not None:
        scores = scores + log_mass
    return np.exp(scores - logsumexp(scores, axis=-1, keepdims=True))


def _enumerated_labels(labels, label_channel):
    candidates = np.broadcast_to(np.array([0, 1]), (labels.shape[0], 2))
    if label_channel is None:
        mass = (candidates == labels[:, None]).astype(float)
    else:
        rows = label_channel.likelihood(labels)
        mass = rows / rows.sum(axis=-1, keepdims=True)
    with np.errstate(divide='ignore'):
        return candidates, np.log(mass)


def _importance_chunk(labels, features, domain, theta, prior, channels, samples, rng):
    log_mass = None
    if channels.inputs is None:
        sampled_labels, log_mass = _enumerated_labels(labels, channels.label)
        samples = 2
    elif channels.label is None:
        sampled_labels = np.repeat(labels[:, None], samples, axis=1)
    else:
        sampled_labels = channels.label.sample_posterior(np.repeat(labels[:, None], samples, axis=1), None, rng)

    repeated = np.repeat(features[:, None, :], samples, axis=1)
    states = None
    if channels.inputs is None:
        sampled = repeated
    elif isinstance(channels.inputs, GaussianChannel):
        sampled = channels.inputs.sample_posterior(repeated, prior.mean, prior.variance, rng)
    else:
        sampled = channels.inputs.sample_posterior(repeated, prior.tables, rng)
    if domain.is_discrete:
        states = sampled

    inputs = encode_inputs(sampled, domain)
    log_phi = log_expit((2 * sampled_labels - 1) * (inputs @ theta))
    return sampled_labels, inputs, importance_weights(log_phi, log_mass), states, log_mass


def draw_importance_batch(noisy: LabeledDataset, model, prior, channels: ChannelPair,
                          samples, seed, iteration=0, stream='importance'):
    """
    Importance samples for every noisy record, drawn from per-chunk streams keyed by
    (seed, stream, iteration, chunk). With clean inputs both labels are enumerated instead,
    so every record carries exactly two entries whatever `samples` is.
    """
    _check_width(model, np.empty((1, noisy.num_features + 1)))
    if channels.inputs is not None and not isinstance(channels.inputs, GaussianChannel):
        if not noisy.domain.is_discrete or channels.inputs.num_states != noisy.domain.num_states:
            raise DataError('input channel and feature domain disagree on the number of states')
    _check_prior(prior, channels.inputs, noisy.domain)

    parts = []
    for records, rng in streams.chunks(noisy.num_records, seed, stream, iteration):
        parts.append(_importance_chunk(noisy.labels[records], noisy.features[records], noisy.domain,
                                       model.theta_c, prior, channels, samples, rng))
    labels, inputs, weights, states, log_mass = zip(*parts)
    return ImportanceBatch(labels=np.concatenate(labels), inputs=np.concatenate(inputs),
                           weights=np.concatenate(weights),
                           states=np.concatenate(states) if states[0] is not None else None,
                           log_mass=np.concatenate(log_mass) if log_mass[0] is not None else None)


def sample_importance(label, features, domain, model, prior, channels, samples, seed):
    """
    The importance batch entry of a single noisy record (c̃, x̃).
    """
    record = LabeledDataset(np.asarray(features)[None, :], [label], domain)
    return draw_importance_batch(record, model, prior, channels, samples, seed)


def energy_class(batch: ImportanceBatch, theta_c):
    """
    Σ_n Σ_s w(s|n) log φ((2c^s - 1) θᵀx^s) and its gradient, the weights held fixed.
    """
    theta_c = np.asarray(theta_c, dtype=float)
    signs = 2 * batch.labels - 1
    margins = signs * (batch.inputs @ theta_c)
    value = float(np.sum(batch.weights * log_expit(margins)))
    scale = batch.weights * signs * expit(-margins)
    gradient = np.einsum('ns,nsd->d', scale, batch.inputs)
    return value, gradient


def spread_label_loglik(batch: ImportanceBatch, theta_c):
    """
    (1/N) Σ_n log Σ_s m(s|n) φ((2c^s - 1) θᵀx^s): the importance estimate of the label log
    likelihood of the release, up to terms that do not depend on θ_c.
    """
    signs = 2 * batch.labels - 1
    log_phi = log_expit(signs * (batch.inputs @ np.asarray(theta_c, dtype=float)))
    if batch.log_mass is None:
        scores = log_phi - np.log(batch.num_samples)
    else:
        scores = log_phi + batch.log_mass
    return float(np.mean(logsumexp(scores, axis=1)))


def update_prior_discrete(batch: ImportanceBatch, num_states, floor=PRIOR_FLOOR):
    """
    p(k|d) ∝ Σ_n Σ_s w(s|n) 1[x^s_n[d] = k], floored and renormalised.
    """
    if batch.states is None or batch.num_records == 0:
        raise DataError('a prior update needs a non-empty batch of discrete samples')
    num_features = batch.states.shape[-1]
    offsets = batch.states + np.arange(num_features) * num_states
    weights = np.broadcast_to(batch.weights[..., None], batch.states.shape)
    counts = np.bincount(offsets.ravel(), weights=weights.ravel(), minlength=num_features * num_states)
    return DiscretePrior.from_counts(counts.reshape(num_features, num_states), floor)


def _initial_prior(noisy, channels, config, prior):
    mode = config.prior_mode
    if mode == PriorMode.GAUSSIAN:
        if prior is not None:
            return prior
        return GaussianPrior.isotropic(noisy.num_features, config.gaussian_prior_mean,
                                       config.gaussian_prior_variance)
    if not noisy.domain.is_discrete:
        raise ConfigError(f'prior mode {mode.value} needs discrete features')
    if mode == PriorMode.TRUE:
        if prior is None:
            raise ConfigError('the fixed-true prior mode needs the true prior to be supplied')
        return prior
    if mode == PriorMode.PRELEARNED:
        if not isinstance(channels.inputs, DiscreteStateChannel):
            return DiscretePrior.from_counts(
                np.apply_along_axis(np.bincount, 0, noisy.features, minlength=noisy.domain.num_states).T,
                config.prior_floor)
        return learn_prior_from_marginals(noisy.features, channels.inputs, config.prior_floor)
    return DiscretePrior.flat(noisy.num_features, noisy.domain.num_states)


def check_channels(channels):
    for name, channel in (('label', channels.label), ('input', channels.inputs)):
        if channel is None:
            continue
        verdict = validate_spread_noise(channel, allow_passthrough=True)
        if not verdict:
            raise DegenerateChannelError(f'the {name} channel is not valid spread noise '
                                         f'({verdict.reason.value})')


def train_spread_logreg(noisy: LabeledDataset, channels: ChannelPair, config: TrainConfig = TrainConfig(),
                        prior=None):
    """
    Fit θ_c (and, in learned mode, the prior tables) to corrupted data by importance-sampled
    EM. Fresh samples are drawn every outer iteration. The run stops after max_outer_iters, or
    once the moving average of the monitor log likelihood has failed to improve by `tolerance`
    on `patience` consecutive iterations.
    """
    check_channels(channels)
    prior = _initial_prior(noisy, channels, config, prior)
    model = _initial_model(noisy.num_features, config.seed)
    theta = np.array(model.theta_c)
    learned = config.prior_mode == PriorMode.LEARNED
    monitor = None
    trace = []
    loglik_trace = []
    streak = 0
    for iteration in range(config.max_outer_iters):
        batch = draw_importance_batch(noisy, LogregModel(theta), prior, channels, config.samples,
                                      config.seed, iteration)
        if channels.inputs is None:
            monitor = batch
        elif monitor is None or learned:
            monitor = draw_importance_batch(noisy, LogregModel(theta), prior, channels, config.samples,
                                            config.seed, stream='monitor')
        value, gradient = energy_class(batch, theta)
        energy = value / noisy.num_records
        if not np.isfinite(energy) or not np.all(np.isfinite(gradient)):
            raise NumericalError('energy became non-finite', iteration=iteration,
                                 theta_norm=float(np.linalg.norm(theta)))
        trace.append(energy)
        loglik_trace.append(spread_label_loglik(monitor, theta))
        step = gradient / noisy.num_records
        if config.m_step == 'newton':
            probabilities = expit(batch.inputs @ theta)
            curvature = batch.weights * probabilities * (1 - probabilities) / noisy.num_records
            step = _newton_direction(batch.inputs, curvature, step)
        theta = theta + config.learning_rate * step
        if learned:
            prior = update_prior_discrete(batch, noisy.domain.num_states, config.prior_floor)
        if iteration % 50 == 0:
            logger.debug('iteration %d: energy %.6f, monitor loglik %.6f', iteration, energy, loglik_trace[-1])
        streak = streak + 1 if _smoothed_gain_below(loglik_trace, config.window, config.tolerance) else 0
        if streak >= config.patience:
            break
    logger.info('spread training stopped after %d iterations, energy %.6f', len(trace), trace[-1])
    return TrainResult(model=LogregModel(theta), prior=prior, trace=trace, iterations=len(trace),
                       converged=streak >= config.patience, loglik_trace=loglik_trace)


def _enumerate_joint(noisy, model, prior, channels):
    num_states = noisy.domain.num_states
    configurations = np.array(list(itertools.product(range(num_states), repeat=noisy.num_features)))
    if len(configurations) * 2 > MAX_ENUMERATED_STATES:
        raise ConfigError('problem too large to enumerate exactly')
    labels = np.repeat([0, 1], len(configurations))
    states = np.tile(configurations, (2, 1))
    inputs = encode_inputs(states, noisy.domain)

    log_joint = log_expit((2 * labels - 1) * (inputs @ model.theta_c)) + prior.log_prob(states)
    log_joint = np.broadcast_to(log_joint, (noisy.num_records, len(labels))).copy()
    if channels.label is not None:
        log_joint += np.log(channels.label.to_matrix()[noisy.labels[:, None], labels[None, :]])
    else:
        log_joint += np.where(noisy.labels[:, None] == labels[None, :], 0.0, -np.inf)
    if channels.inputs is not None:
        rows = channels.inputs.likelihood(noisy.features)
        features = np.arange(noisy.num_features)
        log_joint += np.log(rows[:, features, states]).sum(axis=-1)
    else:
        matches = (noisy.features[:, None, :] == states[None, :, :]).all(axis=-1)
        log_joint += np.where(matches, 0.0, -np.inf)
    return labels, states, inputs, log_joint


def exact_posterior_batch(noisy: LabeledDataset, model, prior: DiscretePrior, channels: ChannelPair):
    """
    The exact E-step for a tiny discrete problem: every (c, x) configuration is a "sample",
    weighted by its posterior p(c, x | c̃, x̃).
    """
    labels, states, inputs, log_joint = _enumerate_joint(noisy, model, prior, channels)
    weights = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
    num_records = noisy.num_records
    return ImportanceBatch(labels=np.broadcast_to(labels, (num_records, len(labels))),
                           inputs=np.broadcast_to(inputs, (num_records,) + inputs.shape),
                           weights=weights,
                           states=np.broadcast_to(states, (num_records,) + states.shape))


def spread_loglik_enumerated(noisy: LabeledDataset, model, prior: DiscretePrior, channels: ChannelPair):
    """
    (1/N) Σ_n log p̃(c̃_n, x̃_n), summing the joint over every clean configuration.
    """
    _, _, _, log_joint = _enumerate_joint(noisy, model, prior, channels)
    return float(np.mean(logsumexp(log_joint, axis=1)))
