"""
The spreadlearn command line: corrupt, estimate, train, eval, analyze and experiment.

Every subcommand reads its inputs, calls into the engine and writes the result. Messages go to
standard error; machine-readable output goes to the named file or, failing that, to standard
output. Exit status is 0 on success, 1 on a usage error, 2 on a data error and 3 on a
numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from spreadlearn import __version__
from spreadlearn.engine import baselines, estimators
from spreadlearn.engine.channels import (DiscreteChannel, DiscreteStateChannel, FlipChannel, GaussianChannel,
                                         channel_from_dict, channels_from_dict)
from spreadlearn.engine.data import FeatureDomain
from spreadlearn.engine.datasets import (DEFAULT_CLASSES, corrupt_dataset, load_idx, read_csv,
                                         true_marginal_prior, write_csv)
from spreadlearn.engine.errors import ConfigError, DataError, SpreadLearnError
from spreadlearn.engine.experiments import ExperimentConfig, ExperimentData, evaluate, run_experiment
from spreadlearn.engine.logreg import M_STEPS, TrainConfig, TrainResult, train_logreg, train_spread_logreg
from spreadlearn.ui.figures import render_figures
from spreadlearn.ui.images import noisy_image_grid, write_grid_svg

logger = logging.getLogger(__name__)

USAGE_STATUS = 1
GRID_IMAGES = 4
ANALYZE_MODES = ('recon-curve', 'noisy-label-grad', 'noisy-label-hess', 'anisotropy')
RECON_FLIP_PROBABILITIES = (0.0, 0.001, 0.002, 0.003, 0.004)
GRID_VARIANCES = (0.1, 0.5)


class ArgumentParser(argparse.ArgumentParser):
    """Exits with status 1 (not argparse's 2, which means a data error here) on bad usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_STATUS, f'{self.prog}: error: {message}\n')


def read_json(path):
    try:
        with open(path) as stream:
            return json.load(stream)
    except OSError as error:
        raise DataError(f'cannot read {path}: {error}') from error
    except json.JSONDecodeError as error:
        raise ConfigError(f'{path} is not valid JSON: {error}') from error


def write_json(values, path=None):
    text = json.dumps(values, indent=2, sort_keys=True) + '\n'
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def domain_from(args):
    return FeatureDomain.continuous() if args.states is None else FeatureDomain.discrete(args.states)


def load_dataset(args):
    """A dataset from --data (CSV) or from an --images/--labels IDX pair."""
    if args.images or args.labels:
        if not (args.images and args.labels):
            raise ConfigError('--images and --labels must be given together')
        return load_idx(args.images, args.labels, args.classes, args.per_class, args.seed)
    if not args.data:
        raise ConfigError('either --data or --images/--labels is required')
    return read_csv(args.data, domain_from(args))


def load_model(path):
    values = read_json(path)
    if not isinstance(values, dict) or 'theta_c' not in values:
        raise DataError(f'{path} does not hold a model')
    return TrainResult.from_dict(values)


def corrupt(args):
    dataset = read_csv(args.data, domain_from(args))
    channels = channels_from_dict(read_json(args.channels))
    noisy = corrupt_dataset(dataset, channels, args.seed)
    write_csv(noisy, args.out)
    logger.info('corrupted %d records (%s)', noisy.num_records, noisy.provenance.describe())


def binary_channel(channel):
    if isinstance(channel, FlipChannel):
        return channel
    if isinstance(channel, DiscreteChannel) and channel.num_states == 2:
        matrix = channel.to_matrix()
        return FlipChannel(matrix[1, 0], matrix[0, 1])
    return None


def estimate(args):
    channel = channel_from_dict(read_json(args.channel))
    if not isinstance(channel, DiscreteStateChannel):
        raise ConfigError('estimate needs a discrete channel')
    try:
        frame = pd.read_csv(args.counts)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as error:
        raise DataError(f'cannot read {args.counts}: {error}') from error
    if not {'state', 'count'} <= set(frame.columns):
        raise DataError(f'{args.counts} needs columns "state" and "count"')
    counts = np.zeros(channel.num_states)
    states = channel.check_states(frame['state'].to_numpy())
    np.add.at(counts, states, frame['count'].to_numpy(dtype=float))

    result = estimators.spread_mle_discrete(counts, channel, strategy=args.strategy)
    output = {'q': result.q.tolist(), 'objective': float(result.objective),
              'iterations': result.iterations, 'converged': result.converged}
    flip = binary_channel(channel)
    if flip is not None:
        frequency = estimators.NoisyFrequency(f_tilde=counts[1] / counts.sum(), n=int(counts.sum()))
        output['voting'] = estimators.voting_estimate(frequency, flip).theta
    write_json(output, args.out)


def train_config_from(args):
    values = {'seed': args.seed, 'prior_mode': args.prior}
    for option in ('samples', 'learning_rate', 'iterations', 'm_step'):
        value = getattr(args, option)
        if value is not None:
            values['max_outer_iters' if option == 'iterations' else option] = value
    return TrainConfig.from_dict(values)


def train(args):
    dataset = load_dataset(args)
    config = train_config_from(args)
    if args.method == 'logreg':
        result = train_logreg(dataset, config)
    else:
        if not args.channels:
            raise ConfigError('spread training needs --channels')
        channels = channels_from_dict(read_json(args.channels))
        prior = None
        if args.prior_data:
            prior = true_marginal_prior(read_csv(args.prior_data, dataset.domain))
        result = train_spread_logreg(dataset, channels, config, prior)
    write_json(result.to_dict(config), args.out)
    logger.info('trained for %d iterations, final objective %.6f', result.iterations, result.final_energy)


def evaluate_model(args):
    model = load_model(args.model).model
    scores = evaluate(model, load_dataset(args))
    write_json({'accuracy': scores.accuracy, 'loglik': scores.loglik}, args.out)


def analyze(args):
    if args.mode == 'recon-curve':
        output_dir = Path(args.out_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        flip_probabilities = args.p_f or RECON_FLIP_PROBABILITIES
        curves = [baselines.recon_curve(p_f, args.grid_step) for p_f in flip_probabilities]
        local_curves = [baselines.recon_curve(p_f, args.grid_step, local=True) for p_f in flip_probabilities]
        for curve, local in zip(curves, local_curves):
            curve.write_csv(output_dir / f'recon-{curve.p_f:g}.csv')
            local.write_csv(output_dir / f'recon-interior-{local.p_f:g}.csv')
        render_figures(output_dir, curves=curves, local_curves=local_curves)
        return

    if args.mode == 'anisotropy':
        channel = FlipChannel.symmetric(args.p_f[0] if args.p_f else 0.2)
        report = baselines.anisotropy_counterexample(np.reshape(args.covariance, (2, 2)), args.theta0,
                                                     channel, args.records, args.seed)
        write_json({'gradient': report.gradient.tolist(), 'standard_errors': report.standard_errors.tolist(),
                    'gradient_norm': report.gradient_norm, 'tangential': report.tangential,
                    'tangential_error': report.tangential_error, 'exceeds': report.exceeds}, args.out)
        return

    analysis = baselines.NoisyLabelAnalysis(p_1to1=args.p_1to1, p_0to1=args.p_0to1, s=args.scale,
                                            alpha=args.alpha, mc_samples=args.samples, seed=args.seed)
    if args.mode == 'noisy-label-grad':
        gradient = baselines.noisy_label_gradient_at_alpha(analysis)
        objective = baselines.noisy_label_objective_at_alpha(analysis)
        write_json({'alpha': args.alpha, 'gradient': gradient.value,
                    'gradient_standard_error': gradient.standard_error,
                    'objective': objective.value, 'objective_standard_error': objective.standard_error}, args.out)
    else:
        hessian = baselines.noisy_label_hessian_at_zero(analysis, args.method)
        write_json({name: {'value': term.value, 'standard_error': term.standard_error}
                    for name, term in (('first_term', hessian.first_term), ('second_term', hessian.second_term),
                                       ('total', hessian.total))}, args.out)


def grid_settings(config, num_states):
    """
    The (caption, channel) columns of the noisy-image grid: one per flip probability for
    discrete input noise, and a sweep of variances for Gaussian input noise, whose variance
    does not follow p_f.
    """
    if config.input_noise == 'gaussian':
        variances = sorted({config.gaussian_variance, *GRID_VARIANCES})
        return [(f'σ²={variance:g}', GaussianChannel.isotropic(variance)) for variance in variances]
    return [(f'p_f={p_f:g}', config.channels_for(p_f, num_states).inputs) for p_f in config.flip_probabilities]


def experiment(args):
    values = read_json(args.config)
    if args.output_dir:
        values['output_dir'] = args.output_dir
    config = ExperimentConfig.from_dict(values)
    report = run_experiment(config)
    render_figures(config.output_dir, report=report)
    if config.dataset.kind == 'idx' and config.input_noise != 'none':
        test = ExperimentData(config).test
        num_states = test.domain.num_states
        grid, captions = noisy_image_grid(test.features[:GRID_IMAGES], grid_settings(config, num_states),
                                          num_states, config.seed)
        write_grid_svg(grid, captions, Path(config.output_dir) / 'figures' / 'noisy-images.svg')


def add_data_options(parser):
    parser.add_argument('--data', help='CSV file with label column c and features x0..x{D-1}')
    parser.add_argument('--states', type=int, help='number of discrete feature states (omit for continuous)')
    parser.add_argument('--images', help='IDX image file (instead of --data)')
    parser.add_argument('--labels', help='IDX label file (instead of --data)')
    parser.add_argument('--classes', type=int, nargs=2, default=DEFAULT_CLASSES, help='the two digits to keep')
    parser.add_argument('--per-class', type=int, help='records to subsample from each class')


def build_parser():
    parser = ArgumentParser(prog='spreadlearn', description=__doc__.strip().splitlines()[0])
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='-v for progress, -vv for detail')
    commands = parser.add_subparsers(dest='command', metavar='command', parser_class=ArgumentParser)
    commands.required = True

    command = commands.add_parser('corrupt', help='release one corrupted copy of a dataset')
    command.add_argument('--data', required=True)
    command.add_argument('--states', type=int)
    command.add_argument('--channels', required=True, help='JSON channel description')
    command.add_argument('--seed', type=int, required=True)
    command.add_argument('--out', required=True)
    command.set_defaults(handler=corrupt)

    command = commands.add_parser('estimate', help='spread maximum likelihood estimate from state counts')
    command.add_argument('--counts', required=True, help='CSV with columns state, count')
    command.add_argument('--channel', required=True, help='JSON channel description')
    command.add_argument('--strategy', choices=('em', 'grid'), default='em')
    command.add_argument('--out')
    command.set_defaults(handler=estimate)

    command = commands.add_parser('train', help='train a logistic regression model')
    add_data_options(command)
    command.add_argument('--channels', help='JSON channel description the data was corrupted with')
    command.add_argument('--method', choices=('spread', 'logreg'), default='spread')
    command.add_argument('--prior', choices=('flat', 'learn', 'true', 'gaussian', 'prelearn'), default='flat')
    command.add_argument('--prior-data', help='clean CSV whose marginals form the true prior')
    command.add_argument('--samples', type=int)
    command.add_argument('--learning-rate', type=float)
    command.add_argument('--iterations', type=int)
    command.add_argument('--m-step', choices=M_STEPS, help='gradient ascent (default) or Newton steps')
    command.add_argument('--seed', type=int, required=True)
    command.add_argument('--out')
    command.set_defaults(handler=train)

    command = commands.add_parser('eval', help='score a model on clean data')
    add_data_options(command)
    command.add_argument('--model', required=True)
    command.add_argument('--seed', type=int, default=0, help='subsampling seed for --per-class')
    command.add_argument('--out')
    command.set_defaults(handler=evaluate_model)

    command = commands.add_parser('analyze', help='analyses of the naive and reconstruction baselines')
    command.add_argument('mode', choices=ANALYZE_MODES)
    command.add_argument('--p-f', type=float, nargs='+')
    command.add_argument('--grid-step', type=float, default=baselines.GRID_STEP)
    command.add_argument('--out-dir', default='analysis')
    command.add_argument('--p-1to1', type=float, default=0.8)
    command.add_argument('--p-0to1', type=float, default=0.2)
    command.add_argument('--scale', type=float, default=1.0)
    command.add_argument('--alpha', type=float, default=0.0)
    command.add_argument('--samples', type=int, default=baselines.MC_SAMPLES)
    command.add_argument('--method', choices=('mc', 'quadrature'), default='mc')
    command.add_argument('--covariance', type=float, nargs=4, default=(1.0, 0.0, 0.0, 25.0))
    command.add_argument('--theta0', type=float, nargs=2, default=(2 ** -0.5, 2 ** -0.5))
    command.add_argument('--records', type=int, default=10 ** 6)
    command.add_argument('--seed', type=int, default=0)
    command.add_argument('--out')
    command.set_defaults(handler=analyze)

    command = commands.add_parser('experiment', help='run a configured experiment')
    command.add_argument('--config', required=True)
    command.add_argument('--output-dir')
    command.set_defaults(handler=experiment)
    return parser


def configure_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')


def main(argv=None):
    """Run spreadlearn with the given arguments and return the exit status."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        args.handler(args)
    except SpreadLearnError as error:
        logger.error('%s', error)
        return error.exit_status
    return 0
