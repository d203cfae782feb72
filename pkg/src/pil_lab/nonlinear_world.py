"""Nonlinear experiment environments.

Two worlds: a torque pendulum (semi-implicit Euler, torque at the pivot,
theta = 0 pointing up) and the benchmark linear system driven by a frozen
randomly-initialized MLP expert. Both expose batched numpy stepping,
analytic Jacobians, and a tape-differentiable step for training-time
consistency losses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import Mlp, MlpSpec, Node, ParamStore, Tape
from .lti_world import (
    FeedbackGain,
    LtiSystem,
    Trajectory,
    TrajectoryDataset,
    _noise_meta,
    lqr_gain,
)
from .numkit import NoiseModel, RngStream

DEG = np.pi / 180.0


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


@dataclass(frozen=True)
class PendulumParams:
    g: float = 9.81
    l: float = 1.0
    mass: float = 1.0
    dt: float = 0.05
    torque_limit: float = 2.0

    def __post_init__(self):
        if min(self.g, self.l, self.mass, self.dt, self.torque_limit) <= 0:
            raise ValueError("pendulum parameters must be positive")


class LinearDynamics:
    """LTI system wrapped in the generic dynamics interface."""

    def __init__(self, sys: LtiSystem):
        self.sys = sys
        self.state_dim = sys.n
        self.input_dim = sys.m
        self.descriptor = {"name": "linear", "A": sys.A.tolist(), "B": sys.B.tolist()}

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return x @ self.sys.A.T + u @ self.sys.B.T

    def jacobians(self, x, u):
        return self.sys.A.copy(), self.sys.B.copy()

    def step_tape(self, tape: Tape, x: Node, u: Node) -> Node:
        A = tape.const(self.sys.A.T)
        B = tape.const(self.sys.B.T)
        return tape.add(tape.matmul(x, A), tape.matmul(u, B))

    def state_difference(self, a, b):
        return a - b


class PendulumDynamics:
    """Rigid-rod torque pendulum, theta = 0 up; semi-implicit Euler.

      thdot' = thdot + dt * (3g/(2l) sin(theta) + 3/(m l^2) u)
      theta' = wrap(theta + dt * thdot')

    Torque is clipped to +-torque_limit before integration.
    """

    def __init__(self, params: PendulumParams = PendulumParams()):
        self.params = params
        self.state_dim = 2
        self.input_dim = 1
        p = params
        self._k = 1.5 * p.g / p.l
        self._b = 3.0 / (p.mass * p.l**2)
        self.descriptor = {
            "name": "pendulum",
            "g": p.g,
            "l": p.l,
            "mass": p.mass,
            "dt": p.dt,
            "torque_limit": p.torque_limit,
        }

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        squeeze = np.asarray(x).ndim == 1
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        lim = self.params.torque_limit
        uc = np.clip(u[:, 0], -lim, lim)
        dt = self.params.dt
        thdot = x[:, 1] + dt * (self._k * np.sin(x[:, 0]) + self._b * uc)
        theta = wrap_angle(x[:, 0] + dt * thdot)
        out = np.stack([theta, thdot], axis=1)
        return out[0] if squeeze else out

    def jacobians(self, x, u):
        x = np.asarray(x, dtype=np.float64).reshape(2)
        u = float(np.asarray(u).reshape(-1)[0])
        dt = self.params.dt
        c = self._k * np.cos(x[0])
        du = self._b if abs(u) < self.params.torque_limit else 0.0
        A = np.array([[1.0 + dt * dt * c, dt], [dt * c, 1.0]])
        B = np.array([[dt * dt * du], [dt * du]])
        return A, B

    def step_tape(self, tape: Tape, x: Node, u: Node) -> Node:
        # no angle wrap on the tape: wrap is non-differentiable and the
        # consistency residual compares states over one step only
        lim = self.params.torque_limit
        dt = self.params.dt
        theta = tape.slice_cols(x, 0, 1)
        thdot = tape.slice_cols(x, 1, 2)
        uc = tape.clip(u, -lim, lim)
        accel = tape.add(
            tape.scale(tape.sin(theta), self._k), tape.scale(uc, self._b)
        )
        thdot_next = tape.add(thdot, tape.scale(accel, dt))
        theta_next = tape.add(theta, tape.scale(thdot_next, dt))
        return tape.concat_cols([theta_next, thdot_next])

    def state_difference(self, a, b):
        d = a - b
        d = np.array(d, dtype=np.float64)
        d[..., 0] = wrap_angle(d[..., 0])
        return d

    def residual_offset(self, diff: np.ndarray) -> np.ndarray:
        """Constant to subtract from a raw state difference so the angle
        component lands on its principal branch. Angle-wrapping has unit
        slope almost everywhere, so treating the offset as a constant
        leaves gradients exact."""
        off = np.zeros_like(diff)
        off[..., 0] = 2.0 * np.pi * np.round(diff[..., 0] / (2.0 * np.pi))
        return off

    # conserved at zero torque: kinetic + potential of the rod's COM
    def energy(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        p = self.params
        inertia = p.mass * p.l**2 / 3.0
        E = 0.5 * inertia * x[:, 1] ** 2 + 0.5 * p.mass * p.g * p.l * np.cos(x[:, 0])
        return E if E.size > 1 else float(E[0])


@dataclass(frozen=True)
class ObsEncoder:
    """State-to-observation encoding: raw pass-through or trig angle."""

    kind: str = "raw"

    def __post_init__(self):
        if self.kind not in ("raw", "trig_angle"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")

    def encode(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "raw":
            return np.asarray(x, dtype=np.float64)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.stack([np.cos(x[:, 0]), np.sin(x[:, 0]), x[:, 1]], axis=1)
        return out

    def decode(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "raw":
            return np.asarray(y, dtype=np.float64)
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        return np.stack([np.arctan2(y[:, 1], y[:, 0]), y[:, 2]], axis=1)

    def obs_dim(self, state_dim: int) -> int:
        return state_dim + 1 if self.kind == "trig_angle" else state_dim


def pendulum_expert(
    params: PendulumParams = PendulumParams(),
    catch_angle: float = 0.3,
    catch_rate: float = 1.0,
    k_energy: float = 1.0,
) -> Callable[[np.ndarray], np.ndarray]:
    """Analytic swing-up expert: energy pumping + LQR catch near upright."""
    dyn = PendulumDynamics(params)
    A_lin, B_lin = dyn.jacobians(np.zeros(2), np.zeros(1))
    K_lin = lqr_gain(
        LtiSystem(A_lin, B_lin), np.diag([10.0, 1.0]), np.array([[0.1]])
    ).K
    e_target = 0.5 * params.mass * params.g * params.l
    lim = params.torque_limit

    def policy(x: np.ndarray) -> np.ndarray:
        squeeze = np.asarray(x).ndim == 1
        xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
        theta = wrap_angle(xb[:, 0])
        thdot = xb[:, 1]
        E = dyn.energy(np.stack([theta, thdot], axis=1))
        E = np.atleast_1d(E)
        u_swing = -k_energy * thdot * (E - e_target)
        u_lqr = K_lin[0, 0] * theta + K_lin[0, 1] * thdot
        near = (np.abs(theta) < catch_angle) & (np.abs(thdot) < catch_rate)
        u = np.where(near, u_lqr, u_swing)
        u = np.clip(u, -lim, lim)[:, None]
        return u[0] if squeeze else u

    return policy


def mlp_expert_linear(sys: LtiSystem, seed: int) -> Callable[[np.ndarray], np.ndarray]:
    """Frozen random MLP policy for the linear system: 2-16-16-1, tanh out."""
    if (sys.n, sys.m) != (2, 1):
        raise ValueError("MLP expert is defined for the 2-state, 1-input system")
    store = ParamStore()
    rng = RngStream(seed)
    net = Mlp(
        MlpSpec((2, 16, 16, 1), hidden_activation="relu",
                output_activation="tanh"),
        store,
        "expert",
        rng,
    )

    def policy(x: np.ndarray) -> np.ndarray:
        return net.forward_np(x)

    return policy


def default_pendulum_x0_model() -> NoiseModel:
    """theta0 uniform in [-pi, pi], thdot0 uniform in [-1, 1]."""
    return NoiseModel.uniform([np.pi, 1.0])


def pendulum_noise_models(
    angle_deg: float = 1.0,
    rate_deg: float = 0.001,
    input_bound: float = 0.1,
) -> tuple[NoiseModel, NoiseModel]:
    """Uniform measurement-noise defaults; degree bounds converted to rad."""
    xi = NoiseModel.uniform([angle_deg * DEG, rate_deg * DEG])
    eta = NoiseModel.uniform([input_bound])
    return xi, eta


def generate_nonlinear_dataset(
    dyn,
    expert: Callable[[np.ndarray], np.ndarray],
    n_traj: int,
    T: int,
    x0_model: NoiseModel,
    xi_model: NoiseModel,
    eta_model: NoiseModel,
    encoder: ObsEncoder,
    rng: RngStream,
    expert_descriptor: str = "custom",
) -> TrajectoryDataset:
    """Expert acts on true states; noise is added to the RAW state before
    encoding; input noise is added to the expert action."""
    n = dyn.state_dim
    m = dyn.input_dim
    trajs = []
    for i in range(n_traj):
        sub = rng.substream(i)
        x = np.zeros((T + 1, n))
        u = np.zeros((T, m))
        x[0] = x0_model.sample(n, sub)
        for t in range(T):
            ut = np.atleast_1d(np.asarray(expert(x[t]))).reshape(m)
            u[t] = ut
            x[t + 1] = np.atleast_2d(dyn.step(x[t][None, :], ut[None, :]))[0]
        xi = xi_model.sample(n, sub, size=T + 1)
        eta = eta_model.sample(m, sub, size=T)
        y = encoder.encode(x + xi)
        trajs.append(Trajectory(x=x, u=u, y=y, v=u + eta, xi=xi, eta=eta))
    meta = {
        "n": n,
        "m": m,
        "T": T,
        "n_traj": n_traj,
        "seed": rng.seed,
        "dynamics": dyn.descriptor,
        "x0_model": _noise_meta(x0_model),
        "xi_model": _noise_meta(xi_model),
        "eta_model": _noise_meta(eta_model),
        "expert": {"kind": expert_descriptor},
        "encoder": encoder.kind,
    }
    return TrajectoryDataset(trajs, meta)
