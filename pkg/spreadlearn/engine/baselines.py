"""
The estimators spread likelihood is compared against.

Naive training fits a standard logistic regression to the corrupted data as if it were clean.
For isotropic Gaussian inputs and label noise its large-sample objective, written as a function
of the angle α between θ and the true θ0, is

    L(α) = E[γ(Z1) log φ(Z2) + (1 - γ(Z1)) log(1 - φ(Z2))],
    γ(x) = p_1to1 φ(x) + p_0to1 (1 - φ(x)),
    Z1 = s ε1,  Z2 = s (ε1 cos α + ε2 sin α),

which is stationary with negative curvature at α = 0 whenever p_1to1 > p_0to1.

Reconstruction first samples a "clean" value from p_θ(x|x̃) and then fits it. Even in the
two-state model its large-sample objective is maximised away from the true θ0 once p_f > 0.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit

from spreadlearn.engine import streams
from spreadlearn.engine.channels import FlipChannel
from spreadlearn.engine.errors import ConfigError, DataError
from spreadlearn.engine.logreg import LogregModel, TrainConfig, logistic_loglik, train_logreg

logger = logging.getLogger(__name__)

GRID_STEP = 1e-4
THETA0_STEP = 0.01
GRID_MARGIN = 1e-6
MC_SAMPLES = 10 ** 6
MIN_MC_SAMPLES = 10 ** 5
QUADRATURE_NODES = 32
SIGNIFICANCE = 5.0
MC_CHUNK = 65536


def naive_loglik_noisy(model: LogregModel, noisy):
    """The clean logistic log likelihood, evaluated on corrupted labels and inputs."""
    return logistic_loglik(model, noisy)


def train_naive_logreg(noisy, config: TrainConfig = TrainConfig()):
    """Fit a logistic regression to corrupted data, ignoring the corruption."""
    return train_logreg(noisy, config)


def cosine(theta, theta0):
    theta = np.asarray(theta, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    norms = np.linalg.norm(theta) * np.linalg.norm(theta0)
    return float(theta @ theta0 / norms) if norms > 0 else 0.0


# Reconstruction


def _check_probability(name, value, open_interval=False):
    value = np.asarray(value, dtype=float)
    if open_interval:
        if np.any((value <= 0) | (value >= 1)):
            raise DataError(f'{name} must lie strictly inside (0, 1)')
    elif np.any((value < 0) | (value > 1)):
        raise DataError(f'{name} must lie in [0, 1]')
    return value


def recon_objective_bernoulli(theta, theta0, p_f):
    """
    The large-sample reconstruction objective of the two-state model,

        J(θ) = Σ_x̃ p_θ0(x̃) Σ_x p_θ(x|x̃) log p_θ(x),   p_θ(x|x̃) ∝ p(x̃|x) p_θ(x),

    computed exactly by enumerating x, x̃ ∈ {0, 1}. Broadcasts over array arguments; θ must lie
    in the open interval.
    """
    theta = _check_probability('theta', theta, open_interval=True)
    theta0 = _check_probability('theta0', theta0)
    p_f = float(_check_probability('p_f', p_f))
    matrix = FlipChannel.symmetric(p_f).to_matrix()

    clean = np.stack([1 - theta, theta], axis=-1)
    truth = np.stack([1 - theta0, theta0], axis=-1)
    observed = truth @ matrix.T
    # joint[..., x̃, x] = p(x̃|x) p_θ(x)
    joint = matrix * clean[..., None, :]
    posterior = joint / joint.sum(axis=-1, keepdims=True)
    inner = (posterior * np.log(clean)[..., None, :]).sum(axis=-1)
    value = (observed * inner).sum(axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def recon_objective_sampled(theta, theta0, p_f, num_records, seed=0):
    """
    The finite-sample objective J_N(θ) averaged over num_records simulated corruptions of
    Bernoulli(θ0) values, with its standard error.
    """
    theta = float(_check_probability('theta', theta, open_interval=True))
    channel = FlipChannel.symmetric(p_f)
    clean = np.stack([1 - theta, theta])
    log_clean = np.log(clean)
    terms = []
    for records, rng in streams.chunks(num_records, seed, 'recon', chunk_size=MC_CHUNK):
        values = (rng.random(records.stop - records.start) < theta0).astype(np.int64)
        observed = channel.corrupt_chunk(values, rng)
        joint = channel.likelihood(observed) * clean
        posterior = joint / joint.sum(axis=-1, keepdims=True)
        terms.append(posterior @ log_clean)
    return _estimate(np.concatenate(terms))


@dataclass(frozen=True, eq=False)
class ReconstructionCurve:
    """
    argmax_theta[i] is the maximiser for theta0_grid[i]. A `local` curve holds the interior
    local maximum nearest θ0 instead of the global one, and NaN where there is none.
    """
    p_f: float
    theta0_grid: np.ndarray
    argmax_theta: np.ndarray
    local: bool = False

    def max_deviation(self):
        deviation = np.abs(self.argmax_theta - self.theta0_grid)
        return float(np.nanmax(deviation)) if np.any(np.isfinite(deviation)) else float('nan')

    def to_frame(self):
        return pd.DataFrame({'p_f': self.p_f, 'theta0': self.theta0_grid, 'argmax_theta': self.argmax_theta})

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')


def theta_grid(step=GRID_STEP):
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    return np.clip(grid, GRID_MARGIN, 1.0 - GRID_MARGIN)


def _nearest_interior_maxima(values, thetas, theta0s):
    peaks = (values[:, 1:-1] >= values[:, :-2]) & (values[:, 1:-1] > values[:, 2:])
    maxima = np.full(len(theta0s), np.nan)
    for row, theta0 in enumerate(theta0s):
        candidates = thetas[1:-1][peaks[row]]
        if candidates.size:
            maxima[row] = candidates[np.argmin(np.abs(candidates - theta0))]
    return maxima


def recon_curve(p_f, grid_step=GRID_STEP, theta0_step=THETA0_STEP, local=False):
    """
    For each θ0 on [0, 1] (spacing theta0_step), the θ-grid argmax of the reconstruction
    objective.

    For p_f > 0 the objective tends to its supremum 0 at both ends of (0, 1), so the global
    argmax jumps to the grid margin on the side of θ0 nearest the boundary. With `local`, the
    interior local maximum nearest θ0 is reported instead; it exists only for small p_f and
    drifts away from θ0 as p_f grows.
    """
    if not 0 <= p_f < 0.5:
        raise ConfigError(f'p_f must lie in [0, 0.5), got {p_f}')
    thetas = theta_grid(grid_step)
    theta0s = np.linspace(0.0, 1.0, int(round(1.0 / theta0_step)) + 1)
    values = recon_objective_bernoulli(thetas[None, :], theta0s[:, None], p_f)
    if local:
        argmax = _nearest_interior_maxima(values, thetas, theta0s)
    else:
        argmax = thetas[np.argmax(values, axis=1)]
    curve = ReconstructionCurve(p_f=float(p_f), theta0_grid=theta0s, argmax_theta=argmax, local=local)
    logger.info('reconstruction curve at p_f=%g deviates by up to %.4f', p_f, curve.max_deviation())
    return curve


# Naive training under label noise


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    standard_error: float

    def z_score(self):
        if self.standard_error == 0:
            return 0.0 if self.value == 0 else float(np.sign(self.value) * np.inf)
        return self.value / self.standard_error


@dataclass(frozen=True)
class HessianEstimate:
    first_term: MonteCarloEstimate
    second_term: MonteCarloEstimate
    total: MonteCarloEstimate


@dataclass(frozen=True)
class NoisyLabelAnalysis:
    """
    p_1to1 = p(c̃=1|c=1), p_0to1 = p(c̃=1|c=0), input scale s and the angle alpha (radians)
    between the naive model and θ0.
    """
    p_1to1: float
    p_0to1: float
    s: float = 1.0
    alpha: float = 0.0
    mc_samples: int = MC_SAMPLES
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        for name in ('p_1to1', 'p_0to1'):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f'{name} must lie in [0, 1]')
        if self.s <= 0:
            raise ConfigError('the input scale s must be positive')

    @classmethod
    def for_channel(cls, channel: FlipChannel, **options):
        return cls(p_1to1=1 - channel.p_1to0, p_0to1=channel.p_0to1, **options)

    def gamma(self, x):
        phi = expit(x)
        return self.p_1to1 * phi + self.p_0to1 * (1 - phi)


def _estimate(samples):
    samples = np.asarray(samples, dtype=float)
    return MonteCarloEstimate(value=float(samples.mean()),
                              standard_error=float(samples.std(ddof=1) / np.sqrt(len(samples))))


def _normal_pairs(analysis, key):
    if analysis.mc_samples < MIN_MC_SAMPLES:
        raise ConfigError(f'at least {MIN_MC_SAMPLES} Monte-Carlo samples are needed')
    draws = analysis.mc_samples // 2 if analysis.antithetic else analysis.mc_samples
    parts = [rng.standard_normal((records.stop - records.start, 2))
             for records, rng in streams.chunks(draws, analysis.seed, key, chunk_size=MC_CHUNK)]
    return np.concatenate(parts)


def _antithetic(analysis, integrand):
    """
    Evaluate integrand(ε1, ε2) and, with antithetic sampling, average it with its value at
    (ε1, -ε2) so each pair contributes one sample.
    """
    eps = _normal_pairs(analysis, 'noisy-label')
    values = integrand(eps[:, 0], eps[:, 1])
    if analysis.antithetic:
        values = 0.5 * (values + integrand(eps[:, 0], -eps[:, 1]))
    return _estimate(values)


def noisy_label_objective_at_alpha(analysis: NoisyLabelAnalysis):
    s, alpha = analysis.s, analysis.alpha

    def integrand(eps1, eps2):
        z1 = s * eps1
        z2 = s * (eps1 * np.cos(alpha) + eps2 * np.sin(alpha))
        gamma = analysis.gamma(z1)
        return gamma * log_expit(z2) + (1 - gamma) * log_expit(-z2)

    return _antithetic(analysis, integrand)


def noisy_label_gradient_at_alpha(analysis: NoisyLabelAnalysis):
    """
    dL/dα = s E[(γ(Z1) - φ(Z2)) (ε2 cos α - ε1 sin α)]. At α = 0 the integrand is odd in ε2,
    so the antithetic estimate is exactly zero there.
    """
    s, alpha = analysis.s, analysis.alpha

    def integrand(eps1, eps2):
        z2 = s * (eps1 * np.cos(alpha) + eps2 * np.sin(alpha))
        return s * (analysis.gamma(s * eps1) - expit(z2)) * (eps2 * np.cos(alpha) - eps1 * np.sin(alpha))

    return _antithetic(analysis, integrand)


def noisy_label_hessian_at_zero(analysis: NoisyLabelAnalysis, method='mc'):
    """
    d²L/dα² at α = 0: s E[-ε γ(sε)] - s² E[φ(sε)(1 - φ(sε))] over a standard normal ε,
    either by Monte Carlo or by 32-node Gauss-Hermite quadrature (zero standard error).
    """
    s = analysis.s

    def first(eps):
        return -s * eps * analysis.gamma(s * eps)

    def second(eps):
        phi = expit(s * eps)
        return -s ** 2 * phi * (1 - phi)

    if method == 'quadrature':
        nodes, weights = np.polynomial.hermite.hermgauss(QUADRATURE_NODES)
        eps = np.sqrt(2.0) * nodes
        weights = weights / np.sqrt(np.pi)
        terms = [MonteCarloEstimate(float(weights @ term(eps)), 0.0) for term in (first, second)]
        total = MonteCarloEstimate(terms[0].value + terms[1].value, 0.0)
        return HessianEstimate(terms[0], terms[1], total)
    if method != 'mc':
        raise ConfigError(f'unknown integration method {method!r}')

    eps = _normal_pairs(analysis, 'noisy-label-hessian')[:, 0]
    if analysis.antithetic:
        first_values = 0.5 * (first(eps) + first(-eps))
        second_values = 0.5 * (second(eps) + second(-eps))
    else:
        first_values, second_values = first(eps), second(eps)
    return HessianEstimate(first_term=_estimate(first_values), second_term=_estimate(second_values),
                           total=_estimate(first_values + second_values))


@dataclass(frozen=True, eq=False)
class AnisotropyReport:
    gradient: np.ndarray
    standard_errors: np.ndarray
    tangential: float
    tangential_error: float

    @property
    def gradient_norm(self):
        return float(np.linalg.norm(self.gradient))

    @property
    def z_scores(self):
        return self.gradient / self.standard_errors

    @property
    def tangential_z(self):
        return self.tangential / self.tangential_error

    @property
    def exceeds(self):
        """Whether the angular gradient at θ0 is significant at five standard errors."""
        return bool(abs(self.tangential_z) > SIGNIFICANCE)


def anisotropy_counterexample(covariance, theta0, channel: FlipChannel, num_records, seed=0):
    """
    Draw x ~ N(0, Σ) and c ~ Bernoulli(φ(θ0ᵀx)), flip the labels through `channel`, and
    evaluate the naive log likelihood gradient (1/N) Σ (c̃ - φ(θ0ᵀx)) x at θ = θ0.
    """
    covariance = np.asarray(covariance, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    if covariance.shape != (2, 2) or theta0.shape != (2,):
        raise DataError('expected a 2 x 2 covariance and a 2-vector θ0')
    if not np.allclose(covariance, covariance.T):
        raise DataError('covariance must be symmetric')
    try:
        factor = np.linalg.cholesky(covariance)
    except np.linalg.LinAlgError:
        raise DataError('covariance must be positive definite') from None

    terms = []
    for records, rng in streams.chunks(num_records, seed, 'anisotropy', chunk_size=MC_CHUNK):
        inputs = rng.standard_normal((records.stop - records.start, 2)) @ factor.T
        probability = expit(inputs @ theta0)
        labels = (rng.random(len(probability)) < probability).astype(np.int64)
        noisy = channel.corrupt_chunk(labels, rng)
        terms.append((noisy - probability)[:, None] * inputs)
    terms = np.concatenate(terms)

    direction = theta0 / np.linalg.norm(theta0)
    orthogonal = np.array([-direction[1], direction[0]])
    angular = _estimate(terms @ orthogonal)
    return AnisotropyReport(gradient=terms.mean(axis=0),
                            standard_errors=terms.std(axis=0, ddof=1) / np.sqrt(len(terms)),
                            tangential=angular.value, tangential_error=angular.standard_error)
