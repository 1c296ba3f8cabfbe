"""
SVG figures: clean-test accuracy against the flip probability (one series per arm) and the
panels of reconstruction argmax curves.
"""

import logging
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

from spreadlearn.engine.errors import DataError
from spreadlearn.ui.colours import Colour

logger = logging.getLogger(__name__)

AXIS_MARGIN = 0.05
FIGURE_SIZE = (8, 4.5)
PANEL_SIZE = 3.2
FIGURES_DIRECTORY = 'figures'
ACCURACY_FIGURE = 'accuracy.svg'
RECONSTRUCTION_FIGURE = 'reconstruction.svg'

# fixed ids and no timestamp, so identical data gives identical files
matplotlib.rcParams['svg.hashsalt'] = 'spreadlearn'


def axis_limits(values, margin=AXIS_MARGIN):
    """The data range widened by `margin` of its width on both sides."""
    low, high = float(min(values)), float(max(values))
    width = high - low
    if width == 0:
        width = max(abs(low), 1.0)
    return low - margin * width, high + margin * width


def _save(figure, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure.savefig(path, format='svg', bbox_inches='tight', metadata={'Date': None})
    logger.info('wrote %s', path)
    return path


def arm_order(report, summary=None):
    """The legend order an accuracy figure uses: declared arms with at least one successful row."""
    summary = report.summary() if summary is None else summary
    present = set(summary.loc[summary['runs'] > 0, 'arm'].astype(str))
    return [arm for arm in report.config.arms if arm.value in present]


def accuracy_figure(report, path):
    """
    Mean clean-test accuracy ± one standard deviation against p_f, in arm declaration order.
    Arms without a successful row are left out with a warning.
    """
    summary = report.summary()
    arms = arm_order(report, summary)
    for arm in report.config.arms:
        if arm not in arms:
            logger.warning('arm %s has no successful rows; left out of the plot', arm.value)
    if not arms:
        raise DataError('the report has no successful rows to plot')
    series = [(arm, summary[(summary['arm'] == arm.value) & (summary['runs'] > 0)]) for arm in arms]

    figure = Figure(figsize=FIGURE_SIZE)
    axes = figure.subplots()
    p_values, accuracy_values = [], []
    for arm, rows in series:
        spread = rows['test_acc_std'].fillna(0.0)
        axes.errorbar(rows['p_f'], rows['test_acc_mean'], yerr=spread, label=arm.value,
                      color=Colour.for_arm(arm).value, marker='o', capsize=3)
        p_values.extend(rows['p_f'])
        accuracy_values.extend(rows['test_acc_mean'] - spread)
        accuracy_values.extend(rows['test_acc_mean'] + spread)
    axes.set_xlim(*axis_limits(p_values))
    axes.set_ylim(*axis_limits(accuracy_values))
    axes.set_xlabel('flip probability $p_f$')
    axes.set_ylabel('clean test accuracy')
    axes.legend(loc='lower left')
    axes.grid(True, axis='y', linestyle='--', alpha=0.5)
    return _save(figure, path)


def reconstruction_figure(curves, path, local_curves=()):
    """
    One panel per flip probability: argmax θ against the true θ0, with the identity line and,
    when given, the matching interior-maximum curve dashed.
    """
    if not curves:
        raise DataError('no reconstruction curves to plot')
    local_by_p = {curve.p_f: curve for curve in local_curves}
    figure = Figure(figsize=(PANEL_SIZE * len(curves), PANEL_SIZE))
    panels = figure.subplots(1, len(curves), sharey=True, squeeze=False)
    limits = axis_limits([0.0, 1.0])
    for axes, curve in zip(panels[0], curves):
        axes.plot([0, 1], [0, 1], color=Colour.IDENTITY.value, linestyle=':', linewidth=1)
        axes.plot(curve.theta0_grid, curve.argmax_theta, color=Colour.SPREAD_FLAT.value, label='global')
        if curve.p_f in local_by_p:
            local = local_by_p[curve.p_f]
            axes.plot(local.theta0_grid, local.argmax_theta, color=Colour.SPREAD_LEARNED.value,
                      linestyle='--', label='interior')
        axes.set_xlim(*limits)
        axes.set_ylim(*limits)
        axes.set_title(f'$p_f$ = {curve.p_f:g}')
        axes.set_xlabel(r'$\theta_0$')
    panels[0][0].set_ylabel(r'argmax $\theta$')
    if local_by_p:
        panels[0][0].legend(loc='upper left')
    return _save(figure, path)


def render_figures(output_dir, report=None, curves=None, local_curves=()):
    """Write whichever figures the given results support into <output_dir>/figures."""
    directory = Path(output_dir) / FIGURES_DIRECTORY
    written = []
    if report is not None:
        written.append(accuracy_figure(report, directory / ACCURACY_FIGURE))
    if curves:
        written.append(reconstruction_figure(curves, directory / RECONSTRUCTION_FIGURE, local_curves))
    return written
