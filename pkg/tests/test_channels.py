import numpy as np
import pytest

from spreadlearn.engine import streams
from spreadlearn.engine.channels import (ChannelPair, DiscreteChannel, FlipChannel, GaussianChannel,
                                         UniformStateChannel, channels_from_dict, concentration_curve,
                                         corrupt_discrete, corrupt_gaussian, majority_vote_attack,
                                         posterior_over_clean, validate_spread_noise)
from spreadlearn.engine.data import Reason
from spreadlearn.engine.errors import ConfigError, DataError, DegenerateEvidenceError


class TestChannelConstruction:

    @staticmethod
    def test_discrete_channel_rejects_columns_that_do_not_sum_to_one():

        # Arrange
        matrix = [[0.9, 0.2], [0.2, 0.8]]

        # Act / Assert
        with pytest.raises(ConfigError):
            DiscreteChannel(matrix)

    @staticmethod
    def test_flip_channel_rejects_probabilities_outside_unit_interval():

        with pytest.raises(ConfigError):
            FlipChannel(1.2, 0.1)

    @staticmethod
    def test_channel_matrices_are_column_stochastic():

        # Arrange
        channels = [FlipChannel(0.1, 0.3), UniformStateChannel(5, 0.4), UniformStateChannel(256, 0.2)]

        # Act
        sums = [channel.to_matrix().sum(axis=0) for channel in channels]

        # Assert
        for column_sums in sums:
            np.testing.assert_allclose(column_sums, 1.0, atol=1e-12)

    @staticmethod
    def test_uniform_state_forward_and_adjoint_match_the_matrix():

        # Arrange
        channel = UniformStateChannel(6, 0.35)
        q = streams.generator(1, 'q').dirichlet(np.ones(6), size=3)
        matrix = channel.to_matrix()

        # Act
        forward = channel.forward(q)
        adjoint = channel.adjoint(q)

        # Assert
        np.testing.assert_allclose(forward, q @ matrix.T, atol=1e-14)
        np.testing.assert_allclose(adjoint, q @ matrix, atol=1e-14)

    @staticmethod
    def test_bare_channel_description_is_the_label_channel():

        # Act
        channels = channels_from_dict({'kind': 'flip', 'p_flip': 0.2})

        # Assert
        assert isinstance(channels.label, FlipChannel)
        assert channels.label.p_0to1 == 0.2
        assert channels.inputs is None

    @staticmethod
    def test_binary_discrete_label_channel_becomes_a_flip_channel():

        # Act
        channels = channels_from_dict({'label': {'kind': 'discrete', 'matrix': [[0.9, 0.3], [0.1, 0.7]]},
                                       'input': {'kind': 'uniform_state', 'num_states': 4, 'p_f': 0.1}})

        # Assert
        assert isinstance(channels.label, FlipChannel)
        assert channels.label.p_0to1 == pytest.approx(0.1)
        assert channels.label.p_1to0 == pytest.approx(0.3)
        assert isinstance(channels.inputs, UniformStateChannel)

    @staticmethod
    def test_unknown_channel_kind_is_a_config_error():

        with pytest.raises(ConfigError):
            channels_from_dict({'kind': 'laplace', 'scale': 1.0})

    @staticmethod
    def test_channel_pair_serialises_both_parts():

        # Arrange
        pair = ChannelPair(label=FlipChannel.symmetric(0.2), inputs=GaussianChannel.isotropic(0.5))

        # Act
        values = pair.to_dict()

        # Assert
        assert values == {'label': {'kind': 'flip', 'p_flip': 0.2}, 'input': {'kind': 'gaussian', 'variance': 0.5}}


class TestValidateSpreadNoise:

    @staticmethod
    def test_symmetric_flip_below_one_half_is_valid():
        assert validate_spread_noise(FlipChannel.symmetric(0.2)).reason == Reason.VALID

    @staticmethod
    def test_flip_of_one_half_is_singular():
        assert validate_spread_noise(FlipChannel.symmetric(0.5)).reason == Reason.SINGULAR

    @staticmethod
    def test_noiseless_channel_has_zero_entries():

        # Act
        verdict = validate_spread_noise(FlipChannel.symmetric(0.0))

        # Assert
        assert verdict.reason == Reason.ZERO_ENTRY
        assert not verdict

    @staticmethod
    def test_noiseless_channel_is_a_passthrough_when_allowed():

        # Act
        verdict = validate_spread_noise(UniformStateChannel(256, 0.0), allow_passthrough=True)

        # Assert
        assert verdict.reason == Reason.PASSTHROUGH
        assert verdict

    @staticmethod
    def test_many_state_uniform_channel_is_valid():
        assert validate_spread_noise(UniformStateChannel(256, 0.2)).valid

    @staticmethod
    def test_uniform_channel_that_forgets_its_input_is_singular():

        # Arrange
        channel = UniformStateChannel(256, 255 / 256)

        # Act
        verdict = validate_spread_noise(channel)

        # Assert
        assert verdict.reason == Reason.SINGULAR

    @staticmethod
    def test_gaussian_channel_is_always_valid():
        assert validate_spread_noise(GaussianChannel([0.1, 2.0])).valid


class TestCorruption:

    @staticmethod
    def test_same_seed_gives_identical_release():

        # Arrange
        data = np.arange(10000) % 7
        channel = UniformStateChannel(7, 0.3)

        # Act
        first = corrupt_discrete(data, channel, seed=7)
        second = corrupt_discrete(data, channel, seed=7)
        other = corrupt_discrete(data, channel, seed=8)

        # Assert
        np.testing.assert_array_equal(first, second)
        assert not np.array_equal(first, other)

    @staticmethod
    def test_flip_frequency_matches_channel():

        # Arrange
        data = np.zeros(100000, dtype=np.int64)

        # Act
        noisy = corrupt_discrete(data, FlipChannel(0.2, 0.1), seed=3)

        # Assert
        assert np.mean(noisy) == pytest.approx(0.2, abs=0.01)

    @staticmethod
    def test_uniform_state_moves_only_to_other_states():

        # Arrange
        data = np.full(50000, 3)
        channel = UniformStateChannel(8, 0.4)

        # Act
        noisy = corrupt_discrete(data, channel, seed=11)

        # Assert
        moved = noisy[noisy != 3]
        assert np.mean(noisy != 3) == pytest.approx(0.4, abs=0.01)
        assert set(np.unique(moved)) == set(range(8)) - {3}

    @staticmethod
    def test_noiseless_channel_returns_its_input():

        # Arrange
        data = np.arange(1000) % 2

        # Act
        noisy = corrupt_discrete(data, FlipChannel.symmetric(0.0), seed=2)

        # Assert
        np.testing.assert_array_equal(noisy, data)

    @staticmethod
    def test_out_of_range_state_is_rejected():

        with pytest.raises(DataError):
            corrupt_discrete(np.array([0, 1, 2]), FlipChannel.symmetric(0.1), seed=0)

    @staticmethod
    def test_gaussian_noise_has_requested_variances():

        # Arrange
        data = np.zeros((40000, 2))
        channel = GaussianChannel([0.1, 2.0])

        # Act
        noisy = corrupt_gaussian(data, channel, seed=5)

        # Assert
        np.testing.assert_allclose(noisy.var(axis=0), [0.1, 2.0], rtol=0.05)

    @staticmethod
    def test_gaussian_dimension_mismatch_is_a_data_error():

        with pytest.raises(DataError):
            corrupt_gaussian(np.zeros((5, 3)), GaussianChannel([1.0, 1.0]), seed=0)


class TestPosteriorSampling:

    @staticmethod
    def test_uniform_two_branch_sampler_matches_exact_posterior():

        # Arrange
        channel = UniformStateChannel(4, 0.3)
        prior = np.array([[0.1, 0.2, 0.3, 0.4]])
        observed = np.full((200000, 1), 2)
        exact = channel.likelihood(2) * prior[0]
        exact = exact / exact.sum()

        # Act
        samples = channel.sample_posterior(observed, prior, streams.generator(0, 'posterior'))

        # Assert
        frequencies = np.bincount(samples.ravel(), minlength=4) / samples.size
        np.testing.assert_allclose(frequencies, exact, atol=0.005)

    @staticmethod
    def test_uniform_sampler_without_a_prior_follows_the_likelihood():

        # Arrange
        channel = UniformStateChannel(4, 0.3)
        observed = np.full((200000, 1), 2)

        # Act
        samples = channel.sample_posterior(observed, None, streams.generator(0, 'flat'))

        # Assert
        frequencies = np.bincount(samples.ravel(), minlength=4) / samples.size
        np.testing.assert_allclose(frequencies, [0.1, 0.1, 0.7, 0.1], atol=0.005)

    @staticmethod
    def test_general_sampler_matches_exact_posterior():

        # Arrange
        channel = DiscreteChannel([[0.6, 0.2, 0.1], [0.3, 0.5, 0.2], [0.1, 0.3, 0.7]])
        prior = np.array([[0.5, 0.3, 0.2]])
        observed = np.full((200000, 1), 1)
        exact = channel.likelihood(1) * prior[0]
        exact = exact / exact.sum()

        # Act
        samples = channel.sample_posterior(observed, prior, streams.generator(0, 'general'))

        # Assert
        frequencies = np.bincount(samples.ravel(), minlength=3) / samples.size
        np.testing.assert_allclose(frequencies, exact, atol=0.005)

    @staticmethod
    def test_gaussian_posterior_shrinks_towards_the_prior_mean():

        # Arrange
        channel = GaussianChannel.isotropic(0.1)

        # Act
        mean, variance = channel.posterior(np.array([1.0]), prior_mean=0.0, prior_variance=10.0)

        # Assert
        assert mean[0] == pytest.approx(0.9901, abs=1e-4)
        assert variance[0] == pytest.approx(0.0990, abs=1e-4)


class TestMultipleReleases:

    @staticmethod
    def test_posterior_from_one_release_is_the_normalised_likelihood_under_a_flat_prior():

        # Arrange
        channel = FlipChannel.symmetric(0.2)

        # Act
        posterior = posterior_over_clean([0.5, 0.5], [1], channel)

        # Assert
        np.testing.assert_allclose(posterior, [0.2, 0.8])

    @staticmethod
    def test_impossible_observations_raise():

        # Arrange
        channel = DiscreteChannel(np.eye(2))

        # Act / Assert
        with pytest.raises(DegenerateEvidenceError):
            posterior_over_clean([1.0, 0.0], [1], channel)

    @staticmethod
    def test_majority_vote_picks_most_frequent_release():
        assert majority_vote_attack([1, 1, 0, 1, 0], num_states=2) == 1

    @staticmethod
    def test_posterior_concentrates_on_true_state_as_releases_grow():

        # Arrange
        channel = FlipChannel.symmetric(0.3)

        # Act
        curve = concentration_curve(1, channel, [0.5, 0.5], releases=[1, 10, 100], trials=200, seed=0)

        # Assert
        assert curve[0] < curve[1] < curve[2]
        assert curve[2] > 0.99

    @staticmethod
    def test_three_agreeing_releases_give_the_direct_posterior():

        # Act
        posterior = posterior_over_clean([0.5, 0.5], [1, 1, 1], FlipChannel.symmetric(0.2))

        # Assert
        assert posterior[1] == pytest.approx(0.8 ** 3 / (0.8 ** 3 + 0.2 ** 3))

    @staticmethod
    def test_no_releases_leave_the_prior():
        np.testing.assert_allclose(posterior_over_clean([0.3, 0.7], [], FlipChannel.symmetric(0.2)), [0.3, 0.7])

    @staticmethod
    def test_uninformative_channel_leaves_the_posterior_uniform():

        # Act
        posterior = posterior_over_clean([0.5, 0.5], [1, 0, 1, 1], FlipChannel.symmetric(0.5))

        # Assert
        np.testing.assert_allclose(posterior, [0.5, 0.5])
