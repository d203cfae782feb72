import numpy as np
import pytest

from pil_lab.autodiff import Tape
from pil_lab.lti_world import example_system
from pil_lab.nonlinear_world import (
    LinearDynamics,
    ObsEncoder,
    PendulumDynamics,
    PendulumParams,
    default_pendulum_x0_model,
    generate_nonlinear_dataset,
    mlp_expert_linear,
    pendulum_expert,
    pendulum_noise_models,
    wrap_angle,
)
from pil_lab.numkit import NoiseModel, RngStream


class TestWrapAngle:
    def test_principal_branch(self):
        assert wrap_angle(0.0) == pytest.approx(0.0)
        assert wrap_angle(np.pi) == pytest.approx(np.pi)
        assert wrap_angle(-np.pi) == pytest.approx(np.pi)
        assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
        vals = wrap_angle(np.linspace(-20, 20, 500))
        assert np.all(vals > -np.pi - 1e-12)
        assert np.all(vals <= np.pi + 1e-12)

    def test_identity_inside_branch(self):
        th = np.linspace(-3.1, 3.1, 50)
        np.testing.assert_allclose(wrap_angle(th), th, atol=1e-12)


class TestPendulumDynamics:
    def test_energy_conservation_unforced(self):
        """Semi-implicit Euler drifts < 1% over 100 steps at zero torque."""
        dyn = PendulumDynamics()
        x = np.array([[2.5, 0.5]])
        E0 = dyn.energy(x)
        for _ in range(100):
            x = dyn.step(x, np.zeros((1, 1)))
        drift = abs(dyn.energy(x) - E0) / max(abs(E0), 1e-9)
        assert drift < 0.01

    def test_jacobians_match_finite_differences(self):
        dyn = PendulumDynamics()
        rng = np.random.default_rng(0)
        eps = 1e-6
        for _ in range(20):
            x = rng.normal(size=2) * np.array([2.0, 3.0])
            u = rng.uniform(-1.5, 1.5, size=1)
            A, B = dyn.jacobians(x, u)
            for j in range(2):
                dx = np.zeros(2)
                dx[j] = eps
                fd = (dyn.step(x + dx, u) - dyn.step(x - dx, u)) / (2 * eps)
                np.testing.assert_allclose(A[:, j], fd, atol=1e-6)
            fd = (dyn.step(x, u + eps) - dyn.step(x, u - eps)) / (2 * eps)
            np.testing.assert_allclose(B[:, 0], fd, atol=1e-6)

    def test_torque_clipped(self):
        dyn = PendulumDynamics()
        x = np.array([[1.0, 0.0]])
        big = dyn.step(x, np.array([[100.0]]))
        at_limit = dyn.step(x, np.array([[dyn.params.torque_limit]]))
        np.testing.assert_allclose(big, at_limit, atol=1e-12)

    def test_step_tape_matches_step_modulo_wrap(self):
        dyn = PendulumDynamics()
        rng = np.random.default_rng(1)
        x = rng.normal(size=(6, 2))
        u = rng.uniform(-3, 3, size=(6, 1))
        tape = Tape()
        out = dyn.step_tape(tape, tape.const(x), tape.const(u)).value
        ref = dyn.step(x, u)
        np.testing.assert_allclose(wrap_angle(out[:, 0]), ref[:, 0],
                                   atol=1e-12)
        np.testing.assert_allclose(out[:, 1], ref[:, 1], atol=1e-12)

    def test_state_difference_wraps_angle(self):
        dyn = PendulumDynamics()
        a = np.array([[3.1, 0.0]])
        b = np.array([[-3.1, 0.0]])
        d = dyn.state_difference(a, b)
        assert abs(d[0, 0]) < 0.2

    def test_residual_offset_restores_principal_branch(self):
        dyn = PendulumDynamics()
        diff = np.array([[6.2, 1.0], [0.1, -2.0], [-7.0, 0.0]])
        off = dyn.residual_offset(diff)
        wrapped = diff - off
        np.testing.assert_allclose(wrapped[:, 0], wrap_angle(diff[:, 0]),
                                   atol=1e-12)
        np.testing.assert_allclose(off[:, 1], 0.0, atol=1e-12)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            PendulumParams(dt=-0.1)


class TestLinearDynamics:
    def test_step_matches_system(self):
        sys = example_system()
        dyn = LinearDynamics(sys)
        x = np.random.default_rng(0).normal(size=(4, 2))
        u = np.random.default_rng(1).normal(size=(4, 1))
        np.testing.assert_allclose(dyn.step(x, u),
                                   x @ sys.A.T + u @ sys.B.T, atol=1e-14)

    def test_tape_step_matches(self):
        sys = example_system()
        dyn = LinearDynamics(sys)
        x = np.ones((3, 2))
        u = np.ones((3, 1))
        tape = Tape()
        out = dyn.step_tape(tape, tape.const(x), tape.const(u)).value
        np.testing.assert_allclose(out, dyn.step(x, u), atol=1e-14)


class TestObsEncoder:
    def test_raw_passthrough(self):
        enc = ObsEncoder("raw")
        x = np.random.default_rng(0).normal(size=(5, 2))
        np.testing.assert_array_equal(enc.encode(x), x)
        np.testing.assert_array_equal(enc.decode(x), x)
        assert enc.obs_dim(2) == 2

    def test_trig_round_trip(self):
        enc = ObsEncoder("trig_angle")
        x = np.stack([np.linspace(-3, 3, 20), np.linspace(-5, 5, 20)], axis=1)
        y = enc.encode(x)
        assert y.shape == (20, 3)
        assert enc.obs_dim(2) == 3
        np.testing.assert_allclose(enc.decode(y), x, atol=1e-12)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            ObsEncoder("polar")


class TestPendulumExpert:
    def test_swings_up_from_random_starts(self):
        dyn = PendulumDynamics()
        expert = pendulum_expert()
        rng = RngStream(0)
        x = default_pendulum_x0_model().sample(2, rng, size=20)
        for _ in range(200):
            x = dyn.step(x, expert(x))
        # upright within 0.2 rad and nearly still for every start
        assert np.all(np.abs(wrap_angle(x[:, 0])) < 0.2)
        assert np.all(np.abs(x[:, 1]) < 0.5)

    def test_respects_torque_limit(self):
        expert = pendulum_expert()
        x = np.random.default_rng(0).normal(size=(100, 2)) * 3
        u = expert(x)
        assert np.all(np.abs(u) <= PendulumParams().torque_limit + 1e-12)


class TestMlpExpert:
    def test_deterministic_and_bounded(self):
        sys = example_system()
        a = mlp_expert_linear(sys, seed=42)
        b = mlp_expert_linear(sys, seed=42)
        x = np.random.default_rng(0).normal(size=(10, 2))
        np.testing.assert_array_equal(a(x), b(x))
        assert np.all(np.abs(a(x)) <= 1.0)  # tanh output

    def test_rejects_wrong_dimensions(self):
        from pil_lab.lti_world import LtiSystem
        sys = LtiSystem(np.eye(3), np.ones((3, 1)))
        with pytest.raises(ValueError):
            mlp_expert_linear(sys, seed=0)


class TestNonlinearDataset:
    def test_shapes_and_noise_injection(self):
        dyn = PendulumDynamics()
        enc = ObsEncoder("trig_angle")
        xi, eta = pendulum_noise_models(2.0, 5.0, 0.1)
        ds = generate_nonlinear_dataset(
            dyn, pendulum_expert(), 3, 15, default_pendulum_x0_model(),
            xi, eta, enc, RngStream(0), "swingup_lqr",
        )
        assert len(ds) == 3
        tr = ds.trajectories[0]
        assert tr.x.shape == (16, 2)
        assert tr.y.shape == (16, 3)  # trig encoding widens observations
        # observation = encode(true state + raw-space noise)
        np.testing.assert_allclose(tr.y, enc.encode(tr.x + tr.xi), atol=1e-12)
        np.testing.assert_allclose(tr.v, tr.u + tr.eta, atol=1e-12)
        assert ds.meta["encoder"] == "trig_angle"

    def test_expert_acts_on_true_states(self):
        dyn = PendulumDynamics()
        expert = pendulum_expert()
        ds = generate_nonlinear_dataset(
            dyn, expert, 2, 10, default_pendulum_x0_model(),
            NoiseModel.uniform([0.5, 0.5]), NoiseModel.none(),
            ObsEncoder("raw"), RngStream(1), "swingup_lqr",
        )
        tr = ds.trajectories[0]
        for t in range(tr.T):
            np.testing.assert_allclose(tr.u[t], expert(tr.x[t]), atol=1e-12)
