"""
A module providing labelled datasets: the in-memory representation, synthetic data with a
known true model, synthetic images with mostly-background pixels, MNIST-format (IDX)
ingestion, CSV storage and the corruption of a whole dataset through a pair of channels.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import norm

from spreadlearn.engine import streams
from spreadlearn.engine.channels import (DiscreteStateChannel, GaussianChannel,
                                         corrupt_discrete, corrupt_gaussian)
from spreadlearn.engine.data import FeatureDomain, Provenance
from spreadlearn.engine.errors import ConfigError, DataError
from spreadlearn.engine.priors import PRIOR_FLOOR, DiscretePrior

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
PIXEL_STATES = 256
DEFAULT_CLASSES = (7, 9)
INK_BASE_RANGE = (0.02, 0.3)
INK_SHIFT_RANGE = (-0.1, 0.3)
INK_MIN = 0.01
INK_MAX = 0.6


def encode_inputs(values, domain):
    """
    Map feature values to the logistic regression input: discrete states k become k / (K - 1),
    continuous values pass through, and a constant-1 bias feature is appended.
    """
    values = np.asarray(values, dtype=float)
    if domain.is_discrete:
        values = values / (domain.num_states - 1)
    bias = np.ones(values.shape[:-1] + (1,))
    return np.concatenate([values, bias], axis=-1)


class LabeledDataset:
    """
    N records of (feature vector, binary class). All features share one domain.
    """

    def __init__(self, features, labels, domain: FeatureDomain, provenance: Provenance = None):
        features = np.array(features)
        labels = np.array(labels, dtype=np.int64)
        if features.ndim != 2:
            raise DataError('features must form an N x D matrix')
        if labels.shape != (features.shape[0],):
            raise DataError(f'{features.shape[0]} feature rows but {labels.size} labels')
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise DataError('labels must be binary')
        if domain.is_discrete:
            if features.size and (not np.issubdtype(features.dtype, np.integer)
                                  or features.min() < 0 or features.max() >= domain.num_states):
                raise DataError(f'discrete features must be integers in [0, {domain.num_states})')
        else:
            features = features.astype(float)
        features.setflags(write=False)
        labels.setflags(write=False)
        self.features = features
        self.labels = labels
        self.domain = domain
        self.provenance = provenance or Provenance.clean()

    @property
    def num_records(self):
        return self.features.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    def design(self):
        """The encoded N x (D + 1) input matrix, bias last."""
        return encode_inputs(self.features, self.domain)

    def subset(self, indices):
        return LabeledDataset(self.features[indices], self.labels[indices], self.domain, self.provenance)

    def replaced(self, features, labels, provenance):
        """
        A dataset of the same shape and domain with new values. Provenance can only move from
        clean to corrupted, once.
        """
        if self.provenance.corrupted:
            raise DataError(f'dataset is already {self.provenance.describe()}')
        replacement = LabeledDataset(features, labels, self.domain, provenance)
        if replacement.features.shape != self.features.shape:
            raise DataError('replacement values must keep the dataset shape')
        return replacement

    def fingerprint(self):
        """A short hash of the values, identical for identical datasets."""
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.features).tobytes())
        digest.update(np.ascontiguousarray(self.labels).tobytes())
        return digest.hexdigest()[:16]


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Gaussian inputs x ~ N(mean, covariance) with labels c ~ Bernoulli(φ(θ0ᵀx)). The covariance
    is an isotropic scalar or a diagonal vector. With `num_states`, features are quantised
    to that many states through the standard normal CDF of each standardised coordinate.
    """
    num_records: int
    theta0: Tuple[float, ...]
    covariance: Union[float, Tuple[float, ...]] = 1.0
    mean: Union[float, Tuple[float, ...]] = 0.0
    seed: int = 0
    num_states: Optional[int] = None

    def __post_init__(self):
        theta0 = np.asarray(self.theta0, dtype=float)
        if self.num_records < 1:
            raise ConfigError('a synthetic dataset needs at least one record')
        if theta0.size == 0 or not np.all(np.isfinite(theta0)) or not np.linalg.norm(theta0) > 0:
            raise ConfigError('theta0 must be a finite non-zero vector')
        if np.any(np.asarray(self.covariance, dtype=float) <= 0):
            raise ConfigError('synthetic input variances must be positive')
        if self.num_states is not None and self.num_states < 2:
            raise ConfigError('a quantised synthetic dataset needs at least two states')

    @property
    def num_features(self):
        return len(self.theta0)

    @staticmethod
    def random_direction(num_features, seed):
        direction = streams.generator(seed, 'theta0').standard_normal(num_features)
        return tuple(direction / np.linalg.norm(direction))


def generate_synthetic(spec: SyntheticSpec):
    """
    Draw a clean dataset from the synthetic generator; identical for identical specs.
    """
    theta0 = np.asarray(spec.theta0, dtype=float)
    scale = np.sqrt(np.broadcast_to(np.asarray(spec.covariance, dtype=float), theta0.shape))
    mean = np.broadcast_to(np.asarray(spec.mean, dtype=float), theta0.shape)
    inputs = np.empty((spec.num_records, spec.num_features))
    labels = np.empty(spec.num_records, dtype=np.int64)
    for records, rng in streams.chunks(spec.num_records, spec.seed, 'synthetic'):
        standard = rng.standard_normal((records.stop - records.start, spec.num_features))
        inputs[records] = mean + scale * standard
        labels[records] = rng.random(len(standard)) < expit(inputs[records] @ theta0)
    if spec.num_states is None:
        return LabeledDataset(inputs, labels, FeatureDomain.continuous())
    quantiles = norm.cdf((inputs - mean) / scale)
    states = np.minimum((quantiles * spec.num_states).astype(np.int64), spec.num_states - 1)
    return LabeledDataset(states, labels, FeatureDomain.discrete(spec.num_states))


@dataclass(frozen=True)
class InkSpec:
    """
    Images of `num_features` pixels with mostly-background marginals, in the manner of
    handwritten digits: each pixel is ink (the top state) with a per-class probability and
    background (state 0) otherwise. Classes are equally likely. The two class templates are
    fixed by `template_seed`, the records by `seed`.
    """
    num_records: int
    num_features: int = 64
    num_states: int = 8
    seed: int = 0
    template_seed: int = 0

    def __post_init__(self):
        if self.num_records < 1 or self.num_features < 1:
            raise ConfigError('an ink dataset needs at least one record and one pixel')
        if self.num_states < 2:
            raise ConfigError('an ink dataset needs at least two states')


def ink_templates(num_features, template_seed):
    """
    The (2, D) ink probabilities: background-heavy base rates for class 0, shifted per
    pixel for class 1.
    """
    rng = streams.generator(template_seed, 'ink-templates')
    base = rng.uniform(INK_BASE_RANGE[0], INK_BASE_RANGE[1], num_features)
    shifted = np.clip(base + rng.uniform(INK_SHIFT_RANGE[0], INK_SHIFT_RANGE[1], num_features),
                      INK_MIN, INK_MAX)
    return np.stack([base, shifted])


def generate_ink(spec: InkSpec):
    templates = ink_templates(spec.num_features, spec.template_seed)
    features = np.empty((spec.num_records, spec.num_features), dtype=np.int64)
    labels = np.empty(spec.num_records, dtype=np.int64)
    for records, rng in streams.chunks(spec.num_records, spec.seed, 'ink'):
        chunk_labels = (rng.random(records.stop - records.start) < 0.5).astype(np.int64)
        ink = rng.random((len(chunk_labels), spec.num_features)) < templates[chunk_labels]
        features[records] = np.where(ink, spec.num_states - 1, 0)
        labels[records] = chunk_labels
    return LabeledDataset(features, labels, FeatureDomain.discrete(spec.num_states))


def _read_idx(path, expected_magic):
    try:
        with open(path, 'rb') as stream:
            raw = stream.read()
    except OSError as error:
        raise DataError(f'cannot read {path}: {error}') from error
    if len(raw) < 4:
        raise DataError(f'{path} is truncated')
    magic, = struct.unpack('>I', raw[:4])
    if magic != expected_magic:
        raise DataError(f'{path} has magic number {magic:#010x}, expected {expected_magic:#010x}')
    num_dims = magic & 0xFF
    header_size = 4 + 4 * num_dims
    if len(raw) < header_size:
        raise DataError(f'{path} is truncated')
    shape = struct.unpack(f'>{num_dims}I', raw[4:header_size])
    expected = int(np.prod(shape))
    if len(raw) - header_size < expected:
        raise DataError(f'{path} is truncated: expected {expected} bytes of data')
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_size).reshape(shape)


def load_idx(images_path, labels_path, keep_classes: Sequence[int] = DEFAULT_CLASSES,
             count_per_class: Optional[int] = None, seed: int = 0):
    """
    Load an IDX image/label pair, keep two digit classes (the first becomes class 0, the
    second class 1), optionally subsample `count_per_class` records of each, and flatten
    the images into records of 256-state pixels.
    """
    images = _read_idx(images_path, IMAGES_MAGIC)
    digits = _read_idx(labels_path, LABELS_MAGIC)
    if len(images) != len(digits):
        raise DataError(f'{len(images)} images but {len(digits)} labels')
    if len(keep_classes) != 2:
        raise ConfigError('exactly two classes must be kept')

    chosen = []
    for digit in keep_classes:
        indices = np.flatnonzero(digits == digit)
        if indices.size == 0:
            raise DataError(f'class {digit} does not occur in {labels_path}')
        if count_per_class is not None:
            if count_per_class > indices.size:
                raise DataError(f'asked for {count_per_class} records of class {digit}, only {indices.size} exist')
            rng = streams.generator(seed, 'subsample', digit)
            indices = np.sort(rng.choice(indices, size=count_per_class, replace=False))
        chosen.append(indices)
    indices = np.concatenate(chosen)
    features = images[indices].reshape(len(indices), -1).astype(np.int64)
    labels = (digits[indices] == keep_classes[1]).astype(np.int64)
    logger.info('loaded %d records of classes %s from %s', len(indices), tuple(keep_classes), images_path)
    return LabeledDataset(features, labels, FeatureDomain.discrete(PIXEL_STATES))


def balanced_subset(dataset, count_per_class, seed):
    """Draw `count_per_class` records of each class without replacement."""
    chosen = []
    for label in (0, 1):
        indices = np.flatnonzero(dataset.labels == label)
        if count_per_class > indices.size:
            raise DataError(f'asked for {count_per_class} records of class {label}, only {indices.size} exist')
        rng = streams.generator(seed, 'balanced', label)
        chosen.append(np.sort(rng.choice(indices, size=count_per_class, replace=False)))
    return dataset.subset(np.concatenate(chosen))


def write_csv(dataset, path):
    """
    Header row, label column `c`, feature columns x0..x{D-1}.
    """
    frame = pd.DataFrame(dataset.features, columns=[f'x{d}' for d in range(dataset.num_features)])
    frame.insert(0, 'c', dataset.labels)
    frame.to_csv(path, index=False, float_format='%.17g')


def read_csv(path, domain):
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as error:
        raise DataError(f'cannot read {path}: {error}') from error
    if 'c' not in frame.columns:
        raise DataError(f'{path} has no label column "c"')
    columns = [f'x{d}' for d in range(len(frame.columns) - 1)]
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise DataError(f'{path} is missing feature columns {missing[:3]}')
    features = frame[columns].to_numpy()
    if domain.is_discrete:
        if not np.all(np.equal(np.mod(features, 1), 0)):
            raise DataError(f'{path} holds non-integer values for a discrete domain')
        features = features.astype(np.int64)
    return LabeledDataset(features, frame['c'].to_numpy(), domain)


def true_marginal_prior(dataset, floor=PRIOR_FLOOR):
    """
    The per-feature empirical state frequencies of a (clean) discrete dataset.
    """
    if not dataset.domain.is_discrete:
        raise DataError('a marginal prior needs discrete features')
    num_states = dataset.domain.num_states
    offsets = dataset.features + np.arange(dataset.num_features) * num_states
    counts = np.bincount(offsets.ravel(), minlength=dataset.num_features * num_states)
    return DiscretePrior.from_counts(counts.reshape(dataset.num_features, num_states), floor)


def to_continuous(dataset, center=None):
    """
    Rescale discrete states to [0, 1] and subtract a per-feature center (by default this
    dataset's own mean). Returns the continuous dataset and the center used.
    """
    if not dataset.domain.is_discrete:
        raise DataError('dataset is already continuous')
    values = dataset.features / (dataset.domain.num_states - 1)
    if center is None:
        center = values.mean(axis=0)
    continuous = LabeledDataset(values - center, dataset.labels, FeatureDomain.continuous(),
                                dataset.provenance)
    return continuous, center


def whiten(dataset, center=None, scale=None):
    """
    Standardise every feature to zero mean and unit variance; constant features become 0.
    Pass the `center` and `scale` returned for a training set to apply the same map to its
    test set. Returns the continuous dataset, the center and the scale used.
    """
    values = np.asarray(dataset.features, dtype=float)
    if dataset.domain.is_discrete:
        values = values / (dataset.domain.num_states - 1)
    if center is None:
        center = values.mean(axis=0)
    if scale is None:
        spread = values.std(axis=0)
        scale = np.where(spread > 0, spread, 1.0)
    standardised = LabeledDataset((values - center) / scale, dataset.labels, FeatureDomain.continuous(),
                                  dataset.provenance)
    return standardised, center, scale


def corrupt_dataset(dataset, channels, seed):
    """
    Release one corrupted copy of every record: labels through channels.label, inputs through
    channels.inputs (either may be None to leave that part unchanged).
    """
    labels = dataset.labels
    features = dataset.features
    if channels.label is not None:
        labels = corrupt_discrete(labels, channels.label, streams.derive_seed(seed, 'label'))
    if channels.inputs is not None:
        input_seed = streams.derive_seed(seed, 'input')
        if isinstance(channels.inputs, GaussianChannel):
            if dataset.domain.is_discrete:
                raise DataError('Gaussian noise needs continuous features')
            features = corrupt_gaussian(features, channels.inputs, input_seed)
        elif isinstance(channels.inputs, DiscreteStateChannel):
            if not dataset.domain.is_discrete or channels.inputs.num_states != dataset.domain.num_states:
                raise DataError(f'a {channels.inputs.num_states}-state channel cannot corrupt '
                                f'{dataset.domain.describe()} features')
            features = corrupt_discrete(features, channels.inputs, input_seed)
    parts = [channel.channel_id for channel in (channels.label, channels.inputs) if channel is not None]
    return dataset.replaced(features, labels, Provenance.corrupted_by('+'.join(parts) or 'none', seed))
