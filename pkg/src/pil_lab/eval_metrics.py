"""Evaluation of learned policies: trajectory discrepancy, pendulum
episode returns, and empirical learning-error scaling fits."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .lti_world import FeedbackGain, LtiSystem
from .nonlinear_world import LinearDynamics, wrap_angle
from .numkit import NoiseModel, RngStream, spectral_norm


@dataclass
class DiscrepancyResult:
    per_traj: np.ndarray
    mean: float
    std: float
    n_test: int

    @property
    def half_std(self) -> float:
        return 0.5 * self.std


def _as_dyn(sys_or_dyn):
    if isinstance(sys_or_dyn, LtiSystem):
        return LinearDynamics(sys_or_dyn)
    return sys_or_dyn


def max_discrepancy(
    sys_or_dyn,
    expert_policy: Callable[[np.ndarray], np.ndarray],
    learned_policy: Callable[[np.ndarray], np.ndarray],
    n_test: int,
    T: int,
    x0_model: NoiseModel,
    xi_model: NoiseModel,
    rng: RngStream,
) -> DiscrepancyResult:
    """Paired rollouts from shared starts: expert on true states, learned
    policy on fresh noisy measurements; reports max-over-time deviation."""
    dyn = _as_dyn(sys_or_dyn)
    n = dyn.state_dim
    m = dyn.input_dim
    x0 = x0_model.sample(n, rng, size=n_test)
    xe = x0.copy()
    xh = x0.copy()
    worst = np.zeros(n_test)
    for t in range(T):
        ue = np.atleast_2d(expert_policy(xe)).reshape(n_test, m)
        y = xh + xi_model.sample(n, rng, size=n_test)
        uh = np.atleast_2d(learned_policy(y)).reshape(n_test, m)
        xe = dyn.step(xe, ue)
        xh = dyn.step(xh, uh)
        diff = dyn.state_difference(xe, xh)
        worst = np.maximum(worst, np.linalg.norm(diff, axis=1))
    return DiscrepancyResult(
        per_traj=worst,
        mean=float(worst.mean()),
        std=float(worst.std()),
        n_test=n_test,
    )


def pendulum_reward(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Standard torque-pendulum step cost, negated."""
    theta = wrap_angle(x[:, 0])
    return -(theta**2 + 0.1 * x[:, 1] ** 2 + 0.001 * u[:, 0] ** 2)


@dataclass
class ReturnResult:
    mean_return: float
    expert_return: float
    ratio: float


def episode_return(
    dyn,
    policy: Callable[[np.ndarray], np.ndarray],
    expert_policy: Callable[[np.ndarray], np.ndarray],
    n_test: int,
    T: int,
    x0_model: NoiseModel,
    rng: RngStream,
    xi_model: Optional[NoiseModel] = None,
) -> ReturnResult:
    """Mean episode return and its ratio to the expert on shared starts."""
    n = dyn.state_dim
    m = dyn.input_dim
    if xi_model is None:
        xi_model = NoiseModel.none()
    x0 = x0_model.sample(n, rng, size=n_test)
    returns = np.zeros((2, n_test))
    for row, pol, noisy in ((0, policy, True), (1, expert_policy, False)):
        x = x0.copy()
        for t in range(T):
            obs = x + xi_model.sample(n, rng, size=n_test) if noisy else x
            u = np.atleast_2d(pol(obs)).reshape(n_test, m)
            returns[row] += pendulum_reward(x, u)
            x = dyn.step(x, u)
    mean_ret = float(returns[0].mean())
    exp_ret = float(returns[1].mean())
    # returns are negative costs; ratio relative to expert magnitude
    ratio = mean_ret / exp_ret if exp_ret != 0 else 1.0
    return ReturnResult(mean_return=mean_ret, expert_return=exp_ret, ratio=ratio)


@dataclass
class ScalingFit:
    t_eff: np.ndarray
    mean_error: np.ndarray          # (n_noise, n_T) grid
    sigma_xi_levels: np.ndarray
    slope: float
    intercept: float
    residuals: np.ndarray
    noise_floor: np.ndarray         # large-T plateau per noise level


def scaling_scan(
    sys: LtiSystem,
    K_star: FeedbackGain,
    fit_fn: Callable,
    T_grid: Sequence[int],
    sigma_xi_levels: Sequence[float],
    sigma_eta: float,
    n_seeds: int,
    rng: RngStream,
    H: int = 1,
    plateau_points: int = 2,
    traj_len: int = 16,
    fit_skip: int = 1,
) -> ScalingFit:
    """Grid of mean ||K_hat - K*|| over (state-noise level, sample count).

    ``fit_fn(dataset) -> FeedbackGain`` wraps the estimator under test.
    Each grid point T is a total transition budget, realized as
    ``T // traj_len`` fresh trajectories of length ``traj_len`` so the
    data stays persistently exciting as the budget grows (a single long
    trajectory of a stable closed loop decays to zero and stops adding
    information). The log-log slope is fit on the zero-state-noise row
    against the effective chunk count per dataset, excluding the
    ``fit_skip`` smallest budgets where the finite-sample bias of the
    inverted Gram matrix still dominates the asymptotic rate; the noise
    floor per level is the mean error over the largest
    ``plateau_points`` budgets. With no noise anywhere the slope fit is
    skipped (nan).
    """
    T_grid = np.asarray(sorted(T_grid), dtype=int)
    if len(T_grid) < 2:
        raise ValueError("need at least two T values")
    if T_grid[0] < traj_len:
        raise ValueError(f"smallest budget {T_grid[0]} < traj_len {traj_len}")
    sigma_xi_levels = np.asarray(sigma_xi_levels, dtype=float)
    n = sys.n
    m = sys.m
    from .lti_world import generate_expert_dataset  # local to avoid cycle

    x0_model = NoiseModel.isotropic_gaussian(1.0, n)
    eta_model = (
        NoiseModel.isotropic_gaussian(sigma_eta**2, m)
        if sigma_eta > 0
        else NoiseModel.none()
    )
    errs = np.zeros((len(sigma_xi_levels), len(T_grid)))
    for i, sx in enumerate(sigma_xi_levels):
        xi_model = (
            NoiseModel.isotropic_gaussian(sx**2, n) if sx > 0 else NoiseModel.none()
        )
        for j, T in enumerate(T_grid):
            cell = rng.substream(i * len(T_grid) + j)
            n_traj = max(1, int(T) // traj_len)
            acc = 0.0
            for s in range(n_seeds):
                ds = generate_expert_dataset(
                    sys, K_star, n_traj, traj_len, x0_model, xi_model,
                    eta_model, cell.substream(s),
                )
                K_hat = fit_fn(ds)
                acc += spectral_norm(K_hat.K - K_star.K)
            errs[i, j] = acc / n_seeds
    t_eff = (T_grid // traj_len) * (traj_len - H + 1)
    zero_rows = np.where(sigma_xi_levels == 0.0)[0]
    if len(zero_rows) > 0 and errs[zero_rows[0]].max() > 1e-7:
        logx = np.log(t_eff[fit_skip:].astype(float))
        logy = np.log(errs[zero_rows[0]][fit_skip:])
        coeffs = np.polyfit(logx, logy, 1)
        slope, intercept = float(coeffs[0]), float(coeffs[1])
        residuals = logy - (slope * logx + intercept)
    else:
        slope, intercept = float("nan"), float("nan")
        residuals = np.zeros(len(T_grid) - fit_skip)
    floor = errs[:, -plateau_points:].mean(axis=1)
    return ScalingFit(
        t_eff=t_eff,
        mean_error=errs,
        sigma_xi_levels=sigma_xi_levels,
        slope=slope,
        intercept=intercept,
        residuals=residuals,
        noise_floor=floor,
    )
