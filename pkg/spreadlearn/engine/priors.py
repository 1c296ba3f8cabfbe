"""
Input priors p(x) for the logistic regression model: factorised discrete tables p(k|d) and
factorised Gaussians N(μ_d, σ̄²_d).
"""
from dataclasses import dataclass

import numpy as np

from spreadlearn.engine.errors import ConfigError, DataError

PRIOR_FLOOR = 1e-6
GAUSSIAN_PRIOR_MEAN = 0.0
GAUSSIAN_PRIOR_VARIANCE = 10.0


def floor_and_normalise(tables, floor=PRIOR_FLOOR):
    """
    Normalise each row to sum to 1, raise every entry to at least `floor` and renormalise.
    """
    tables = np.asarray(tables, dtype=float)
    totals = tables.sum(axis=-1, keepdims=True)
    if np.any(totals <= 0):
        raise DataError('cannot normalise a table with no mass')
    tables = np.maximum(tables / totals, floor)
    return tables / tables.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class DiscretePrior:
    """
    One table p(k|d) over K states for each of the D features.
    """
    tables: np.ndarray

    def __post_init__(self):
        tables = np.array(self.tables, dtype=float)
        if tables.ndim != 2 or tables.shape[1] < 2:
            raise DataError('a discrete prior needs a D x K table with K >= 2')
        if np.any(tables < 0) or np.any(np.abs(tables.sum(axis=1) - 1) > 1e-10):
            raise DataError('every prior table must lie on the simplex')
        tables.setflags(write=False)
        object.__setattr__(self, 'tables', tables)

    @staticmethod
    def flat(num_features, num_states):
        return DiscretePrior(np.full((num_features, num_states), 1.0 / num_states))

    @staticmethod
    def from_counts(counts, floor=PRIOR_FLOOR):
        return DiscretePrior(floor_and_normalise(counts, floor))

    @property
    def num_features(self):
        return self.tables.shape[0]

    @property
    def num_states(self):
        return self.tables.shape[1]

    def log_prob(self, states):
        """Σ_d log p(x[d]|d) over the last axis of `states`."""
        states = np.asarray(states)
        features = np.broadcast_to(np.arange(self.num_features), states.shape)
        return np.log(self.tables[features, states]).sum(axis=-1)

    def to_dict(self):
        return {'kind': 'discrete', 'tables': self.tables.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """
    Independent Gaussians N(mean_d, variance_d), one per feature.
    """
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        variance = np.array(self.variance, dtype=float)
        if mean.shape != variance.shape or mean.ndim != 1:
            raise DataError('Gaussian prior mean and variance must be vectors of the same length')
        if np.any(variance <= 0):
            raise ConfigError('Gaussian prior variances must be strictly positive')
        mean.setflags(write=False)
        variance.setflags(write=False)
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'variance', variance)

    @staticmethod
    def isotropic(num_features, mean=GAUSSIAN_PRIOR_MEAN, variance=GAUSSIAN_PRIOR_VARIANCE):
        return GaussianPrior(np.full(num_features, float(mean)), np.full(num_features, float(variance)))

    @property
    def num_features(self):
        return self.mean.shape[0]

    def to_dict(self):
        return {'kind': 'gaussian', 'mean': self.mean.tolist(), 'variance': self.variance.tolist()}


def prior_from_dict(spec):
    if spec is None:
        return None
    if spec.get('kind') == 'discrete':
        return DiscretePrior(spec['tables'])
    if spec.get('kind') == 'gaussian':
        return GaussianPrior(spec['mean'], spec['variance'])
    raise ConfigError(f'unknown prior kind {spec.get("kind")!r}')
