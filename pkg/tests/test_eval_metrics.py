import numpy as np
import pytest

from pil_lab.eval_metrics import (
    episode_return,
    max_discrepancy,
    pendulum_reward,
    scaling_scan,
)
from pil_lab.linear_learners import fit_bc
from pil_lab.lti_world import example_system, lqr_gain
from pil_lab.nonlinear_world import PendulumDynamics, pendulum_expert
from pil_lab.numkit import NoiseModel, RngStream


class TestMaxDiscrepancy:
    def test_identical_policies_no_noise(self):
        sys = example_system()
        K = lqr_gain(sys, np.eye(2), 0.01 * np.eye(1))
        res = max_discrepancy(sys, K, K, 10, 30,
                              NoiseModel.isotropic_gaussian(1.0, 2),
                              NoiseModel.none(), RngStream(0))
        assert res.mean == pytest.approx(0.0, abs=1e-12)
        assert res.per_traj.shape == (10,)

    def test_noise_on_measurements_creates_gap(self):
        sys = example_system()
        K = lqr_gain(sys, np.eye(2), 0.01 * np.eye(1))
        res = max_discrepancy(sys, K, K, 20, 30,
                              NoiseModel.isotropic_gaussian(1.0, 2),
                              NoiseModel.isotropic_gaussian(0.04, 2),
                              RngStream(0))
        assert res.mean > 0.0
        assert res.half_std == pytest.approx(0.5 * res.std)

    def test_worse_policy_scores_worse(self):
        sys = example_system()
        K = lqr_gain(sys, np.eye(2), 0.01 * np.eye(1))
        from pil_lab.lti_world import FeedbackGain
        K_bad = FeedbackGain(K.K * 0.2)
        good = max_discrepancy(sys, K, K, 20, 30,
                               NoiseModel.isotropic_gaussian(1.0, 2),
                               NoiseModel.isotropic_gaussian(1e-4, 2),
                               RngStream(1))
        bad = max_discrepancy(sys, K, K_bad, 20, 30,
                              NoiseModel.isotropic_gaussian(1.0, 2),
                              NoiseModel.isotropic_gaussian(1e-4, 2),
                              RngStream(1))
        assert bad.mean > good.mean


class TestPendulumReturns:
    def test_reward_peaks_upright(self):
        up = pendulum_reward(np.zeros((1, 2)), np.zeros((1, 1)))
        down = pendulum_reward(np.array([[np.pi, 0.0]]), np.zeros((1, 1)))
        assert up[0] == pytest.approx(0.0)
        assert down[0] < up[0]

    def test_expert_outperforms_zero_policy(self):
        dyn = PendulumDynamics()
        expert = pendulum_expert()
        zero = lambda x: np.zeros((np.atleast_2d(x).shape[0], 1))  # noqa: E731
        res = episode_return(dyn, zero, expert, 10, 100,
                             NoiseModel.uniform([np.pi, 1.0]), RngStream(0))
        assert res.expert_return > res.mean_return


class TestScalingScan:
    def fit_fn_factory(self):
        return fit_bc

    def test_shapes_and_slope_sign(self):
        sys = example_system()
        K = lqr_gain(sys, np.eye(2), 0.01 * np.eye(1))
        fit = scaling_scan(sys, K, fit_bc, [32, 64, 128, 256],
                           [0.0, 0.1], sigma_eta=0.1, n_seeds=3,
                           rng=RngStream(0))
        assert fit.mean_error.shape == (2, 4)
        assert fit.t_eff.shape == (4,)
        assert fit.slope < 0  # error shrinks with data
        assert fit.noise_floor.shape == (2,)
        # noisy row sits above the zero-noise row at the largest budget
        assert fit.mean_error[1, -1] > fit.mean_error[0, -1]

    def test_no_noise_anywhere_skips_slope(self):
        sys = example_system()
        K = lqr_gain(sys, np.eye(2), 0.01 * np.eye(1))
        fit = scaling_scan(sys, K, fit_bc, [32, 64], [0.0], sigma_eta=0.0,
                           n_seeds=2, rng=RngStream(0))
        assert np.isnan(fit.slope)

    def test_input_validation(self):
        sys = example_system()
        K = lqr_gain(sys, np.eye(2), 0.01 * np.eye(1))
        with pytest.raises(ValueError):
            scaling_scan(sys, K, fit_bc, [32], [0.0], 0.1, 1, RngStream(0))
        with pytest.raises(ValueError):
            scaling_scan(sys, K, fit_bc, [8, 64], [0.0], 0.1, 1,
                         RngStream(0))
