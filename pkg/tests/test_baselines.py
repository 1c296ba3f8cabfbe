import numpy as np
import pytest

from spreadlearn.engine.baselines import (NoisyLabelAnalysis, anisotropy_counterexample, cosine,
                                          naive_loglik_noisy, noisy_label_gradient_at_alpha,
                                          noisy_label_hessian_at_zero, noisy_label_objective_at_alpha,
                                          recon_curve, recon_objective_bernoulli, recon_objective_sampled,
                                          train_naive_logreg)
from spreadlearn.engine.channels import ChannelPair, FlipChannel
from spreadlearn.engine.datasets import SyntheticSpec, corrupt_dataset, generate_synthetic
from spreadlearn.engine.errors import ConfigError, DataError
from spreadlearn.engine.logreg import train_logreg

ANISOTROPIC = [[1.0, 0.0], [0.0, 25.0]]
DIAGONAL_THETA0 = np.array([1.0, 1.0]) / np.sqrt(2.0)


def theta0_index(curve, theta0):
    return int(np.flatnonzero(np.isclose(curve.theta0_grid, theta0))[0])


class TestNaiveTraining:

    @staticmethod
    def test_label_noise_keeps_direction_but_shrinks_weights():

        # Arrange
        theta0 = SyntheticSpec.random_direction(3, seed=4)
        clean = generate_synthetic(SyntheticSpec(num_records=5000, theta0=theta0, seed=4))
        noisy = corrupt_dataset(clean, ChannelPair(label=FlipChannel.symmetric(0.2)), seed=4)

        # Act
        naive = train_naive_logreg(noisy).model.theta_c[:3]
        reference = train_logreg(clean).model.theta_c[:3]

        # Assert
        assert cosine(naive, theta0) > 0.9
        assert np.linalg.norm(naive) < 0.8 * np.linalg.norm(reference)

    @staticmethod
    def test_naive_loglik_is_evaluated_on_the_noisy_release():

        # Arrange
        clean = generate_synthetic(SyntheticSpec(num_records=2000, theta0=(0.6, 0.8), seed=1))
        noisy = corrupt_dataset(clean, ChannelPair(label=FlipChannel.symmetric(0.3)), seed=1)
        model = train_logreg(clean).model

        # Act
        on_noisy = naive_loglik_noisy(model, noisy)
        on_clean = naive_loglik_noisy(model, clean)

        # Assert
        assert on_noisy < on_clean

    @staticmethod
    def test_cosine_of_zero_vector_is_zero():
        assert cosine([0.0, 0.0], [1.0, 0.0]) == 0.0


class TestReconstruction:

    @staticmethod
    def test_noiseless_reconstruction_returns_theta0():

        # Act
        curve = recon_curve(0.0)

        # Assert
        assert curve.max_deviation() < 1e-4

    @staticmethod
    def test_small_flip_probabilities_already_move_the_maximum():

        for p_f in (0.001, 0.002, 0.003, 0.004):
            # Act
            curve = recon_curve(p_f)

            # Assert
            assert curve.max_deviation() > 0.01

    @staticmethod
    def test_global_maximum_moves_away_from_theta0_of_three_tenths():

        # Act
        curve = recon_curve(0.004)

        # Assert
        index = theta0_index(curve, 0.3)
        assert abs(curve.argmax_theta[index] - 0.3) > 0.01

    @staticmethod
    def test_interior_maximum_drifts_from_theta0():

        # Act
        curve = recon_curve(0.004, local=True)

        # Assert
        deviation = abs(curve.argmax_theta[theta0_index(curve, 0.3)] - 0.3)
        assert 0.002 < deviation < 0.01

    @staticmethod
    def test_interior_maxima_deviate_for_every_small_flip_probability():

        for p_f in (0.001, 0.002, 0.003, 0.004):
            # Act
            curve = recon_curve(p_f, local=True)

            # Assert
            assert curve.local
            assert curve.max_deviation() > 5e-4

    @staticmethod
    def test_objective_is_symmetric_under_relabelling():

        # Arrange
        theta = np.array([0.1, 0.25, 0.6, 0.93])

        # Act
        direct = recon_objective_bernoulli(theta, 0.3, 0.1)
        mirrored = recon_objective_bernoulli(1 - theta, 0.7, 0.1)

        # Assert
        np.testing.assert_allclose(direct, mirrored, rtol=1e-12)

    @staticmethod
    def test_sampled_objective_agrees_with_exact_objective():

        # Act
        exact = recon_objective_bernoulli(0.3, 0.35, 0.1)
        sampled = recon_objective_sampled(0.3, 0.35, 0.1, num_records=200000, seed=2)

        # Assert
        assert abs(sampled.value - exact) < 4 * sampled.standard_error

    @staticmethod
    def test_theta_on_the_boundary_is_a_data_error():

        with pytest.raises(DataError):
            recon_objective_bernoulli(0.0, 0.3, 0.1)

    @staticmethod
    def test_flip_probability_of_one_half_is_a_config_error():

        with pytest.raises(ConfigError):
            recon_curve(0.5)

    @staticmethod
    def test_curve_table_has_one_row_per_theta0(tmp_path):

        # Arrange
        curve = recon_curve(0.002, grid_step=1e-3, theta0_step=0.05)
        path = tmp_path / 'recon.csv'

        # Act
        curve.write_csv(path)

        # Assert
        lines = path.read_text().splitlines()
        assert lines[0] == 'p_f,theta0,argmax_theta'
        assert len(lines) == 22


class TestNoisyLabelAnalysis:

    @staticmethod
    def test_gradient_vanishes_at_the_true_direction():

        # Act
        estimate = noisy_label_gradient_at_alpha(NoisyLabelAnalysis(p_1to1=0.8, p_0to1=0.2))

        # Assert
        assert estimate.value == 0.0
        assert estimate.z_score() == 0.0

    @staticmethod
    def test_plain_monte_carlo_gradient_is_consistent_with_zero():

        # Arrange
        analysis = NoisyLabelAnalysis(p_1to1=0.8, p_0to1=0.2, mc_samples=200000, antithetic=False, seed=1)

        # Act
        estimate = noisy_label_gradient_at_alpha(analysis)

        # Assert
        assert abs(estimate.z_score()) < 4

    @staticmethod
    def test_gradient_at_the_true_direction_is_zero_across_channels_and_scales():

        for p_1to1 in (0.6, 0.8, 0.95):
            for p_0to1 in (0.05, 0.2, 0.4):
                for s in (0.5, 2.0):
                    # Arrange
                    analysis = NoisyLabelAnalysis(p_1to1=p_1to1, p_0to1=p_0to1, s=s, mc_samples=10 ** 6,
                                                  antithetic=False, seed=3)

                    # Act
                    estimate = noisy_label_gradient_at_alpha(analysis)

                    # Assert
                    assert abs(estimate.z_score()) < 3

    @staticmethod
    def test_gradient_points_back_towards_theta0():

        # Arrange
        analysis = NoisyLabelAnalysis(p_1to1=0.8, p_0to1=0.2, alpha=0.3, mc_samples=200000)

        # Act
        estimate = noisy_label_gradient_at_alpha(analysis)

        # Assert
        assert estimate.z_score() < -3
        assert estimate.value == pytest.approx(-0.0366, abs=0.003)

    @staticmethod
    def test_objective_is_larger_at_the_true_direction():

        # Arrange
        aligned = NoisyLabelAnalysis(p_1to1=0.8, p_0to1=0.2, mc_samples=200000)
        rotated = NoisyLabelAnalysis(p_1to1=0.8, p_0to1=0.2, alpha=0.5, mc_samples=200000)

        # Act / Assert
        assert noisy_label_objective_at_alpha(aligned).value > noisy_label_objective_at_alpha(rotated).value

    @staticmethod
    def test_curvature_at_the_true_direction_is_negative():

        # Act
        hessian = noisy_label_hessian_at_zero(NoisyLabelAnalysis(p_1to1=0.8, p_0to1=0.2))

        # Assert
        assert hessian.total.z_score() < -5
        assert hessian.second_term.value < -0.19
        assert hessian.total.value == pytest.approx(-0.3306, abs=0.002)

    @staticmethod
    def test_uninformative_labels_leave_only_the_input_term():

        # Act
        hessian = noisy_label_hessian_at_zero(NoisyLabelAnalysis(p_1to1=0.3, p_0to1=0.3))

        # Assert
        assert hessian.first_term.value == pytest.approx(0.0, abs=1e-10)

    @staticmethod
    def test_quadrature_agrees_with_monte_carlo():

        # Arrange
        analysis = NoisyLabelAnalysis.for_channel(FlipChannel.symmetric(0.2))

        # Act
        quadrature = noisy_label_hessian_at_zero(analysis, method='quadrature')
        sampled = noisy_label_hessian_at_zero(analysis)

        # Assert
        assert quadrature.second_term.value == pytest.approx(sampled.second_term.value, abs=1e-3)
        assert quadrature.first_term.value == pytest.approx(-0.12397, abs=1e-4)
        assert quadrature.second_term.value == pytest.approx(-0.20662, abs=1e-4)

    @staticmethod
    def test_too_few_samples_is_a_config_error():

        with pytest.raises(ConfigError):
            noisy_label_gradient_at_alpha(NoisyLabelAnalysis(p_1to1=0.8, p_0to1=0.2, mc_samples=1000))

    @staticmethod
    def test_unknown_integration_method_is_a_config_error():

        with pytest.raises(ConfigError):
            noisy_label_hessian_at_zero(NoisyLabelAnalysis(p_1to1=0.8, p_0to1=0.2), method='simpson')


class TestAnisotropy:

    @staticmethod
    def test_anisotropic_inputs_give_a_significant_angular_gradient():

        # Act
        report = anisotropy_counterexample(ANISOTROPIC, DIAGONAL_THETA0, FlipChannel.symmetric(0.2),
                                           num_records=200000, seed=0)

        # Assert
        assert report.exceeds
        assert abs(report.tangential) == pytest.approx(0.477, abs=0.05)

    @staticmethod
    def test_isotropic_inputs_give_no_angular_gradient():

        # Act
        report = anisotropy_counterexample(np.eye(2), DIAGONAL_THETA0, FlipChannel.symmetric(0.2),
                                           num_records=200000, seed=0)

        # Assert
        assert abs(report.tangential_z) < 4
        assert not report.exceeds

    @staticmethod
    def test_noiseless_labels_give_no_gradient():

        # Act
        report = anisotropy_counterexample(ANISOTROPIC, DIAGONAL_THETA0, FlipChannel.symmetric(0.0),
                                           num_records=200000, seed=1)

        # Assert
        assert np.all(np.abs(report.z_scores) < 4)

    @staticmethod
    def test_covariance_that_is_not_positive_definite_is_a_data_error():

        with pytest.raises(DataError):
            anisotropy_counterexample([[1.0, 2.0], [2.0, 1.0]], DIAGONAL_THETA0, FlipChannel.symmetric(0.2),
                                      num_records=1000)
