"""
The experiment runner: for every flip probability and repetition draw a training set, corrupt it
once, train every arm on that same corrupted release and score each model on a fixed clean test
set. Rows are appended to <output_dir>/report.csv as cells finish, and a rerun skips the rows
already there.
"""

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from spreadlearn.engine import streams
from spreadlearn.engine.baselines import train_naive_logreg
from spreadlearn.engine.channels import ChannelPair, FlipChannel, GaussianChannel, UniformStateChannel
from spreadlearn.engine.data import Arm
from spreadlearn.engine.datasets import (DEFAULT_CLASSES, InkSpec, SyntheticSpec, balanced_subset, corrupt_dataset,
                                         generate_ink, generate_synthetic, load_idx, to_continuous,
                                         true_marginal_prior, whiten)
from spreadlearn.engine.errors import ConfigError, NumericalError
from spreadlearn.engine.logreg import (PriorMode, TrainConfig, logistic_loglik, predict, train_logreg,
                                       train_spread_logreg)

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['arm', 'p_f', 'rep', 'seed', 'train_acc', 'test_acc', 'energy', 'wall_ms', 'status',
                  'data_hash']
REPORT_FILE = 'report.csv'
SUMMARY_FILE = 'summary.csv'
CONFIG_ECHO_FILE = 'config-echo.json'
THREADS_VARIABLE = 'SPREADLEARN_THREADS'
RESUMABLE_OPTIONS = {'repetitions', 'flip_probabilities', 'arms', 'output_dir'}

IDX_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}

DATASET_KINDS = ('synthetic', 'ink', 'idx')
DEFAULT_INK_STATES = 8

INPUT_NOISE_MODES = ('none', 'uniform_state', 'gaussian')

SPREAD_PRIOR_MODES = {
    Arm.SPREAD_FLAT: PriorMode.FLAT,
    Arm.SPREAD_LEARNED: PriorMode.LEARNED,
    Arm.SPREAD_TRUE: PriorMode.TRUE,
    Arm.SPREAD_GAUSSIAN: PriorMode.GAUSSIAN,
}


@dataclass(frozen=True)
class DatasetSource:
    """
    Where the clean data comes from: the Gaussian synthetic generator (`kind='synthetic'`), the
    mostly-background image generator (`kind='ink'`, eight states unless `num_states` says
    otherwise) or a directory holding the four MNIST IDX files (`kind='idx'`).
    """
    kind: str = 'synthetic'
    num_features: int = 10
    covariance: float = 1.0
    num_states: Optional[int] = None
    train_records: int = 500
    test_records: int = 1800
    directory: Optional[str] = None
    classes: Tuple[int, int] = DEFAULT_CLASSES

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f'unknown dataset kind {self.kind!r}')
        if self.kind == 'idx' and not self.directory:
            raise ConfigError('an IDX dataset needs a directory')
        if self.num_features < 1 or self.train_records < 2 or self.test_records < 1:
            raise ConfigError('synthetic dataset sizes must be positive')
        object.__setattr__(self, 'classes', tuple(self.classes))

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f'unknown dataset options {sorted(unknown)}')
        return cls(**values)

    @property
    def discrete(self):
        return self.kind != 'synthetic' or self.num_states is not None

    @property
    def ink_states(self):
        return self.num_states if self.num_states is not None else DEFAULT_INK_STATES


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSource = field(default_factory=DatasetSource)
    arms: Tuple[Arm, ...] = (Arm.CLEAN_LOGREG, Arm.NOISY_LOGREG, Arm.SPREAD_GAUSSIAN)
    flip_probabilities: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4)
    repetitions: int = 10
    seed: int = 0
    output_dir: str = 'results'
    input_noise: str = 'none'
    gaussian_variance: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig)
    train_per_class: int = 250
    test_per_class: int = 900
    whiten: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'arms', tuple(Arm(arm) for arm in self.arms))
        object.__setattr__(self, 'flip_probabilities', tuple(float(p) for p in self.flip_probabilities))
        if not self.arms:
            raise ConfigError('an experiment needs at least one arm')
        if len(set(self.arms)) != len(self.arms):
            raise ConfigError('arms must not repeat')
        if self.repetitions < 1:
            raise ConfigError('repetitions must be at least 1')
        if not self.flip_probabilities or any(not 0 <= p < 0.5 for p in self.flip_probabilities):
            raise ConfigError('flip probabilities must lie in [0, 0.5)')
        if self.input_noise not in INPUT_NOISE_MODES:
            raise ConfigError(f'input_noise must be one of {INPUT_NOISE_MODES}')
        if self.gaussian_variance <= 0:
            raise ConfigError('the Gaussian noise variance must be positive')
        if self.input_noise == 'uniform_state' and not self.dataset.discrete:
            raise ConfigError('uniform-state input noise needs discrete features')
        if self.whiten and not self.continuous:
            raise ConfigError('whitening applies to continuous inputs only')
        continuous = self.continuous
        for arm in self.arms:
            if arm.needs_discrete_inputs and continuous:
                raise ConfigError(f'arm {arm.value} needs discrete inputs')
            if arm == Arm.SPREAD_GAUSSIAN and not continuous:
                raise ConfigError(f'arm {arm.value} needs continuous inputs')

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f'unknown experiment options {sorted(unknown)}')
        if 'dataset' in values:
            values['dataset'] = DatasetSource.from_dict(values['dataset'])
        if 'train' in values:
            values['train'] = TrainConfig.from_dict(values['train'])
        try:
            return cls(**values)
        except ValueError as error:
            raise ConfigError(str(error)) from error

    def to_dict(self):
        values = asdict(self)
        values['dataset']['classes'] = list(self.dataset.classes)
        values['arms'] = [arm.value for arm in self.arms]
        values['flip_probabilities'] = list(self.flip_probabilities)
        values['train'] = self.train.to_dict()
        return values

    @property
    def continuous(self):
        return self.input_noise == 'gaussian' or not self.dataset.discrete

    def channels_for(self, p_f, num_states=None):
        label = FlipChannel.symmetric(p_f)
        if self.input_noise == 'uniform_state':
            return ChannelPair(label=label, inputs=UniformStateChannel(num_states, p_f))
        if self.input_noise == 'gaussian':
            return ChannelPair(label=label, inputs=GaussianChannel.isotropic(self.gaussian_variance))
        return ChannelPair(label=label)


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    loglik: float


def evaluate(model, data):
    """Threshold-0.5 accuracy and mean logistic log likelihood on clean data."""
    predicted = (predict(model, data.design()) > 0.5).astype(np.int64)
    return Evaluation(accuracy=float(np.mean(predicted == data.labels)),
                      loglik=logistic_loglik(model, data))


class ExperimentData:
    """
    The clean data an experiment draws from: a fixed test set plus one training set per
    repetition.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        source = config.dataset
        self.theta0 = None
        self.pool = None
        if source.kind == 'synthetic':
            self.theta0 = SyntheticSpec.random_direction(source.num_features, config.seed)
            test = generate_synthetic(self._synthetic(source.test_records, 'test'))
        elif source.kind == 'ink':
            test = generate_ink(self._ink(source.test_records, 'test'))
        else:
            directory = Path(source.directory)
            images, labels = IDX_FILES['train']
            self.pool = load_idx(directory / images, directory / labels, source.classes)
            images, labels = IDX_FILES['test']
            test = balanced_subset(load_idx(directory / images, directory / labels, source.classes),
                                   config.test_per_class, streams.derive_seed(config.seed, 'test'))
        self.test = test

    def _synthetic(self, num_records, *keys):
        source = self.config.dataset
        return SyntheticSpec(num_records=num_records, theta0=self.theta0, covariance=source.covariance,
                             seed=streams.derive_seed(self.config.seed, *keys), num_states=source.num_states)

    def _ink(self, num_records, *keys):
        source = self.config.dataset
        return InkSpec(num_records=num_records, num_features=source.num_features, num_states=source.ink_states,
                       seed=streams.derive_seed(self.config.seed, *keys),
                       template_seed=streams.derive_seed(self.config.seed, 'templates'))

    def training_set(self, rep):
        source = self.config.dataset
        if source.kind == 'synthetic':
            return generate_synthetic(self._synthetic(source.train_records, 'train', rep))
        if source.kind == 'ink':
            return generate_ink(self._ink(source.train_records, 'train', rep))
        return balanced_subset(self.pool, self.config.train_per_class,
                               streams.derive_seed(self.config.seed, 'train', rep))


@dataclass(frozen=True, eq=False)
class Cell:
    """One (p_f, repetition) cell: a clean training set, its single corrupted release and the test set."""
    p_f: float
    rep: int
    train: object
    noisy: object
    test: object
    channels: ChannelPair


def prepare_cell(config, data: ExperimentData, p_f, rep):
    train, test = data.training_set(rep), data.test
    if config.input_noise == 'gaussian' and train.domain.is_discrete:
        train, center = to_continuous(train)
        test, _ = to_continuous(test, center)
    if config.whiten:
        train, center, scale = whiten(train)
        test, _, _ = whiten(test, center, scale)
    num_states = train.domain.num_states if train.domain.is_discrete else None
    channels = config.channels_for(p_f, num_states)
    noisy = corrupt_dataset(train, channels, streams.derive_seed(config.seed, p_f, rep))
    return Cell(p_f=p_f, rep=rep, train=train, noisy=noisy, test=test, channels=channels)


def arm_seed(config, arm, p_f, rep):
    return streams.derive_seed(config.seed, arm.value, p_f, rep)


def train_arm(arm, cell: Cell, train_config: TrainConfig):
    if arm == Arm.CLEAN_LOGREG:
        return train_logreg(cell.train, train_config)
    if arm == Arm.NOISY_LOGREG:
        return train_naive_logreg(cell.noisy, train_config)
    train_config = replace(train_config, prior_mode=SPREAD_PRIOR_MODES[arm])
    prior = true_marginal_prior(cell.train, train_config.prior_floor) if arm == Arm.SPREAD_TRUE else None
    return train_spread_logreg(cell.noisy, cell.channels, train_config, prior)


def run_arm(config, arm, cell: Cell):
    seed = arm_seed(config, arm, cell.p_f, cell.rep)
    row = {'arm': arm.value, 'p_f': cell.p_f, 'rep': cell.rep, 'seed': seed,
           'train_acc': np.nan, 'test_acc': np.nan, 'energy': np.nan, 'wall_ms': np.nan,
           'status': 'ok', 'data_hash': cell.noisy.fingerprint()}
    started = time.perf_counter()
    try:
        result = train_arm(arm, cell, replace(config.train, seed=seed))
    except NumericalError as error:
        logger.warning('arm %s failed at p_f=%g, rep %d: %s', arm.value, cell.p_f, cell.rep, error)
        row['status'] = 'failed'
    else:
        row['train_acc'] = evaluate(result.model, cell.train).accuracy
        row['test_acc'] = evaluate(result.model, cell.test).accuracy
        row['energy'] = result.final_energy
    row['wall_ms'] = round((time.perf_counter() - started) * 1000.0, 3)
    return row


def thread_count():
    value = os.environ.get(THREADS_VARIABLE)
    if value is None:
        return os.cpu_count() or 1
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f'{THREADS_VARIABLE} must be an integer, got {value!r}') from None
    if threads < 1:
        raise ConfigError(f'{THREADS_VARIABLE} must be at least 1')
    return threads


class ExperimentReport:
    """
    All rows of an experiment (failed ones included) and their per-(arm, p_f) aggregates.
    """

    def __init__(self, rows: pd.DataFrame, config: ExperimentConfig):
        self.config = config
        self.rows = _canonical_order(rows, config)

    def summary(self):
        arm_order = [arm.value for arm in self.config.arms]
        # failed rows carry NaN accuracies, which mean and std skip
        ok = self.rows['status'] == 'ok'
        rows = self.rows.assign(runs=ok.astype(int), failed=(~ok).astype(int))
        grouped = rows.groupby(['arm', 'p_f'], sort=False)
        summary = grouped.agg(test_acc_mean=('test_acc', 'mean'), test_acc_std=('test_acc', 'std'),
                              train_acc_mean=('train_acc', 'mean'), train_acc_std=('train_acc', 'std'),
                              runs=('runs', 'sum'), failed=('failed', 'sum')).reset_index()
        summary['arm'] = pd.Categorical(summary['arm'], categories=arm_order, ordered=True)
        return summary.sort_values(['arm', 'p_f']).reset_index(drop=True)

    def write(self, output_dir=None):
        output_dir = Path(output_dir or self.config.output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        _write_rows(self.rows, output_dir / REPORT_FILE, header=True)
        self.summary().to_csv(output_dir / SUMMARY_FILE, index=False, float_format='%.17g')
        _write_config_echo(output_dir, self.config)


def _write_config_echo(output_dir, config):
    with open(output_dir / CONFIG_ECHO_FILE, 'w') as stream:
        json.dump(config.to_dict(), stream, indent=2, sort_keys=True)
        stream.write('\n')


def _canonical_order(rows, config):
    if rows.empty:
        return pd.DataFrame(columns=REPORT_COLUMNS)
    arm_rank = {arm.value: index for index, arm in enumerate(config.arms)}
    p_rank = {p_f: index for index, p_f in enumerate(config.flip_probabilities)}
    order = rows.assign(_p=rows['p_f'].map(p_rank), _a=rows['arm'].map(arm_rank))
    order = order.sort_values(['_p', 'rep', '_a'], kind='mergesort')
    return order.drop(columns=['_p', '_a']).reset_index(drop=True)[REPORT_COLUMNS]


def _write_rows(rows, path, header):
    rows.to_csv(path, mode='w' if header else 'a', header=header, index=False, float_format='%.17g')


def _completed_rows(path):
    if not path.exists():
        return pd.DataFrame(columns=REPORT_COLUMNS)
    rows = pd.read_csv(path, float_precision='round_trip')
    if list(rows.columns) != REPORT_COLUMNS:
        raise ConfigError(f'{path} does not look like a report of this tool')
    return rows


def _check_config_echo(output_dir, config):
    """
    Rows already in the report were produced under the echoed configuration; refuse to mix
    them with rows of a different one. Only the row grid and the output location may change.
    """
    path = output_dir / CONFIG_ECHO_FILE
    if not path.exists():
        raise ConfigError(f'{output_dir / REPORT_FILE} has rows but no {CONFIG_ECHO_FILE}; '
                          'use a fresh output directory')
    try:
        with open(path) as stream:
            stored = json.load(stream)
    except (OSError, json.JSONDecodeError) as error:
        raise ConfigError(f'cannot read {path}: {error}') from error
    current = json.loads(json.dumps(config.to_dict()))
    keys = (set(stored) | set(current)) - RESUMABLE_OPTIONS
    changed = sorted(key for key in keys if stored.get(key) != current.get(key))
    if changed:
        raise ConfigError(f'{output_dir} holds results of a different configuration '
                          f'(changed: {", ".join(changed)}); use a fresh output directory')


def run_experiment(config: ExperimentConfig):
    """
    Run every (arm, p_f, repetition) row not already present in the report file, appending
    rows in cell order, and return the complete report.
    """
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    report_path = output_dir / REPORT_FILE
    existing = _completed_rows(report_path)
    if not existing.empty:
        _check_config_echo(output_dir, config)
    done = {(arm, float(p_f), int(rep)) for arm, p_f, rep in zip(existing['arm'], existing['p_f'], existing['rep'])}

    pending = []
    for p_f in config.flip_probabilities:
        for rep in range(config.repetitions):
            arms = [arm for arm in config.arms if (arm.value, p_f, rep) not in done]
            if arms:
                pending.append((p_f, rep, arms))
    logger.info('%d of %d cells to run (%d rows already in %s)', len(pending),
                len(config.flip_probabilities) * config.repetitions, len(existing), report_path)
    if not report_path.exists():
        _write_rows(pd.DataFrame(columns=REPORT_COLUMNS), report_path, header=True)
    if existing.empty:
        _write_config_echo(output_dir, config)

    data = ExperimentData(config) if pending else None

    def run_cell(task):
        p_f, rep, arms = task
        cell = prepare_cell(config, data, p_f, rep)
        return [run_arm(config, arm, cell) for arm in arms]

    new_rows = []
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        for rows in pool.map(run_cell, pending):
            frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
            _write_rows(frame, report_path, header=False)
            new_rows.append(frame)
            logger.info('finished p_f=%g rep %d', rows[0]['p_f'], rows[0]['rep'])

    frames = [frame for frame in [existing] + new_rows if not frame.empty]
    rows = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=REPORT_COLUMNS)
    report = ExperimentReport(rows, config)
    failures = int((report.rows['status'] != 'ok').sum())
    if failures:
        logger.warning('%d rows failed and are left out of the aggregates', failures)
    report.write(output_dir)
    return report
