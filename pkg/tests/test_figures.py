import numpy as np
import pandas as pd
import pytest

from spreadlearn.engine.baselines import recon_curve
from spreadlearn.engine.channels import FlipChannel, UniformStateChannel
from spreadlearn.engine.data import Arm
from spreadlearn.engine.errors import DataError
from spreadlearn.engine.experiments import REPORT_COLUMNS, ExperimentConfig, ExperimentReport
from spreadlearn.ui.colours import Colour
from spreadlearn.ui.figures import accuracy_figure, arm_order, axis_limits, reconstruction_figure, render_figures
from spreadlearn.ui.images import TILE_GAP, noisy_image_grid, tile, to_grey, write_grid_svg


def report_with(failing_arm=None):
    config = ExperimentConfig(flip_probabilities=(0.1, 0.3), repetitions=2)
    rows = []
    for p_f in config.flip_probabilities:
        for rep in range(2):
            for arm in config.arms:
                failed = arm == failing_arm
                accuracy = np.nan if failed else 0.9 - p_f / 2 + rep / 100
                rows.append({'arm': arm.value, 'p_f': p_f, 'rep': rep, 'seed': rep, 'train_acc': accuracy,
                             'test_acc': accuracy, 'energy': -0.5, 'wall_ms': 1.0,
                             'status': 'failed' if failed else 'ok', 'data_hash': f'{p_f}-{rep}'})
    return ExperimentReport(pd.DataFrame(rows, columns=REPORT_COLUMNS), config)


class TestAxisLimits:

    @staticmethod
    def test_range_is_widened_on_both_sides():
        assert axis_limits([0.1, 0.4]) == pytest.approx((0.085, 0.415))

    @staticmethod
    def test_constant_values_still_get_a_range():

        # Act
        low, high = axis_limits([0.5, 0.5])

        # Assert
        assert low < 0.5 < high


class TestAccuracyFigure:

    @staticmethod
    def test_figure_is_written_as_svg(tmp_path):

        # Act
        path = accuracy_figure(report_with(), tmp_path / 'accuracy.svg')

        # Assert
        assert path.read_text().lstrip().startswith('<?xml')
        assert '<svg' in path.read_text()

    @staticmethod
    def test_identical_reports_give_identical_files(tmp_path):

        # Act
        first = accuracy_figure(report_with(), tmp_path / 'first.svg')
        second = accuracy_figure(report_with(), tmp_path / 'second.svg')

        # Assert
        assert first.read_bytes() == second.read_bytes()

    @staticmethod
    def test_legend_follows_arm_declaration_order():
        assert arm_order(report_with()) == [Arm.CLEAN_LOGREG, Arm.NOISY_LOGREG, Arm.SPREAD_GAUSSIAN]

    @staticmethod
    def test_arm_without_successful_rows_is_left_out(tmp_path):

        # Arrange
        report = report_with(failing_arm=Arm.SPREAD_GAUSSIAN)

        # Act
        path = accuracy_figure(report, tmp_path / 'accuracy.svg')

        # Assert
        assert path.exists()
        assert arm_order(report) == [Arm.CLEAN_LOGREG, Arm.NOISY_LOGREG]

    @staticmethod
    def test_report_without_successful_rows_is_a_data_error(tmp_path):

        # Arrange
        config = ExperimentConfig(arms=(Arm.CLEAN_LOGREG,), flip_probabilities=(0.1,), repetitions=1)
        rows = pd.DataFrame([{'arm': 'clean-logreg', 'p_f': 0.1, 'rep': 0, 'seed': 0, 'train_acc': np.nan,
                              'test_acc': np.nan, 'energy': np.nan, 'wall_ms': 1.0, 'status': 'failed',
                              'data_hash': 'x'}], columns=REPORT_COLUMNS)

        # Act / Assert
        with pytest.raises(DataError):
            accuracy_figure(ExperimentReport(rows, config), tmp_path / 'accuracy.svg')


class TestReconstructionFigure:

    @staticmethod
    def test_panels_are_written_into_the_figures_directory(tmp_path):

        # Arrange
        curves = [recon_curve(p_f, grid_step=1e-3, theta0_step=0.05) for p_f in (0.0, 0.004)]
        local = [recon_curve(0.004, grid_step=1e-3, theta0_step=0.05, local=True)]

        # Act
        written = render_figures(tmp_path, curves=curves, local_curves=local)

        # Assert
        assert written == [tmp_path / 'figures' / 'reconstruction.svg']
        assert written[0].exists()

    @staticmethod
    def test_no_curves_is_a_data_error(tmp_path):

        with pytest.raises(DataError):
            reconstruction_figure([], tmp_path / 'reconstruction.svg')

    @staticmethod
    def test_nothing_to_render_writes_nothing(tmp_path):
        assert render_figures(tmp_path) == []


class TestImages:

    @staticmethod
    def test_states_map_to_the_full_grey_range():
        np.testing.assert_array_equal(to_grey([0, 1, 3], num_states=4), [0, 85, 255])

    @staticmethod
    def test_tile_is_enlarged_without_smoothing():

        # Arrange
        pixels = np.zeros(28 * 28, dtype=np.uint8)
        pixels[0] = 255

        # Act
        image = tile(pixels, scale=2)

        # Assert
        values = np.asarray(image)
        assert image.size == (56, 56)
        assert values[:2, :2].min() == 255
        assert values[2:, 2:].max() == 0

    @staticmethod
    def test_tile_needs_a_full_image():

        with pytest.raises(DataError):
            tile(np.zeros(100))

    @staticmethod
    def test_grid_has_a_column_per_setting_and_a_row_per_image():

        # Arrange
        images = np.arange(3 * 784).reshape(3, 784) % 256
        settings = [('p_f=0.1', UniformStateChannel(256, 0.1)), ('p_f=0.4', UniformStateChannel(256, 0.4))]

        # Act
        grid, captions = noisy_image_grid(images, settings, num_states=256, seed=0, scale=1)

        # Assert
        assert captions == ['clean', 'p_f=0.1', 'p_f=0.4']
        assert grid.size == (3 * (28 + TILE_GAP) - TILE_GAP, 3 * (28 + TILE_GAP) - TILE_GAP)

    @staticmethod
    def test_grid_svg_embeds_the_raster(tmp_path):

        # Arrange
        images = np.zeros((1, 784), dtype=np.int64)
        grid, captions = noisy_image_grid(images, [('flip', FlipChannel.symmetric(0.3))], num_states=2, seed=1)

        # Act
        path = write_grid_svg(grid, captions, tmp_path / 'figures' / 'noisy.svg')

        # Assert
        text = path.read_text()
        assert 'data:image/png;base64,' in text
        assert '>flip</text>' in text


class TestColours:

    @staticmethod
    def test_every_arm_has_a_distinct_colour():

        # Act
        colours = {Colour.for_arm(arm).value for arm in Arm}

        # Assert
        assert len(colours) == len(Arm)
