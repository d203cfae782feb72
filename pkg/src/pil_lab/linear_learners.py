"""Closed-form estimators for the linear setting.

Everything here works from pooled sums over the noisy observations
(y, v) of all trajectories; true states never enter the estimators.
Decay weights d_tau = alpha^(tau-1) multiply all loss terms at horizon
offset tau.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .lti_world import FeedbackGain, LtiSystem, ObservationView, TrajectoryDataset
from .numkit import Mat, SingularMatrixError, solve_linear, spectral_norm


@dataclass
class PredictorSetLinear:
    """tau-step transition matrices G_1..G_H; G_0 = I implicitly."""

    G: list[np.ndarray]

    def __post_init__(self):
        if not self.G:
            raise ValueError("need at least one predictor (H >= 1)")
        n = self.G[0].shape[0]
        for Gt in self.G:
            if Gt.shape != (n, n):
                raise ValueError("all predictors must be square n x n")

    @property
    def H(self) -> int:
        return len(self.G)

    @property
    def n(self) -> int:
        return self.G[0].shape[0]

    def at(self, tau: int) -> np.ndarray:
        """G_tau with G_0 = I."""
        if tau == 0:
            return np.eye(self.n)
        return self.G[tau - 1]

    @staticmethod
    def true_closed_loop(sys: LtiSystem, K: FeedbackGain, H: int) -> "PredictorSetLinear":
        M = sys.A + sys.B @ K.K
        G, cur = [], np.eye(sys.n)
        for _ in range(H):
            cur = M @ cur
            G.append(cur.copy())
        return PredictorSetLinear(G)


def _check_psd(M: Mat, name: str) -> Mat:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    w = np.linalg.eigvalsh((M + M.T) / 2)
    if w.min() < -1e-10 * max(abs(w.max()), 1.0):
        raise ValueError(f"{name} must be positive semidefinite")
    return M


@dataclass
class LossWeightsLinear:
    Q: Mat
    R: Mat
    P: Mat
    H: int
    alpha: float = 0.9

    def __post_init__(self):
        self.Q = _check_psd(self.Q, "Q")
        self.R = _check_psd(self.R, "R")
        self.P = _check_psd(self.P, "P")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")

    def decay(self, tau: int) -> float:
        return self.alpha ** (tau - 1)


@dataclass
class ComparisonReport:
    omega_pil: np.ndarray
    omega_bc: np.ndarray
    lhs: float
    rhs: float
    condition_holds: bool


@dataclass
class AlternatingResult:
    gain: FeedbackGain
    predictors: PredictorSetLinear
    converged: bool
    n_iters: int
    loss_history: list[float]

    def __iter__(self):
        return iter((self.gain, self.predictors))


def _views(data) -> list[ObservationView]:
    if isinstance(data, TrajectoryDataset):
        return data.observations()
    return list(data)


def fit_predictors_ols(
    data, H: int, ridge: float = 0.0
) -> PredictorSetLinear:
    """Per-tau least squares G_tau = (sum y_{t+tau} y_t')(sum y_t y_t')^-1.

    Sums pool all trajectories; t runs over 0..T-tau for each tau.
    """
    views = _views(data)
    T = views[0].T
    if T < H:
        raise ValueError(f"T={T} < H={H}")
    n = views[0].y.shape[1]
    G = []
    for tau in range(1, H + 1):
        S = np.zeros((n, n))
        M = np.zeros((n, n))
        for vw in views:
            Y0 = vw.y[: T - tau + 1]
            Yt = vw.y[tau : T + 1]
            S += Y0.T @ Y0
            M += Yt.T @ Y0
        S_reg = S + ridge * np.eye(n)
        try:
            # S symmetric: G = M S^-1 solved as (S G')' = M'
            G_tau = solve_linear(S_reg, M.T).T
        except SingularMatrixError as exc:
            if ridge == 0.0:
                raise SingularMatrixError(
                    exc.rcond,
                    "predictor Gram matrix is singular; pass ridge > 0",
                ) from exc
            raise
        G.append(G_tau)
    return PredictorSetLinear(G)


def fit_bc(data) -> FeedbackGain:
    """Behavior cloning: K = (sum v_t y_t')(sum y_t y_t')^-1."""
    views = _views(data)
    n = views[0].y.shape[1]
    m = views[0].v.shape[1]
    S = np.zeros((n, n))
    C = np.zeros((m, n))
    for vw in views:
        Y = vw.y[: vw.T]
        S += Y.T @ Y
        C += vw.v.T @ Y
    K = solve_linear(S, C.T, context="BC Gram matrix").T
    return FeedbackGain(K)


def fit_pil_fixed_G(
    data,
    sys: LtiSystem,
    G: PredictorSetLinear,
    w: LossWeightsLinear,
) -> FeedbackGain:
    """Closed-form gain for the predictive objective with frozen predictors.

    K = (R + B'PB)^-1 [sum d_tau (R v_{t+tau-1} + B'P G_tau y_t
        - B'P A G_{tau-1} y_t)(G_{tau-1} y_t)'] [sum d_tau (G_{tau-1} y_t)
        (G_{tau-1} y_t)']^-1, t = 0..T-H, tau = 1..H.
    """
    views = _views(data)
    T = views[0].T
    H = w.H
    if T < H:
        raise ValueError(f"T={T} < H={H}")
    A, B = sys.A, sys.B
    n, m = sys.n, sys.m
    R, P = w.R, w.P
    lhs = R + B.T @ P @ B
    num = np.zeros((m, n))
    den = np.zeros((n, n))
    for tau in range(1, H + 1):
        d = w.decay(tau)
        Gp = G.at(tau - 1)
        Gt = G.at(tau)
        BtPdG = B.T @ P @ (Gt - A @ Gp)
        for vw in views:
            Y0 = vw.y[: T - H + 1]
            V = vw.v[tau - 1 : T - H + tau]
            Yg = Y0 @ Gp.T
            num += d * ((R @ V.T + BtPdG @ Y0.T) @ Yg)
            den += d * (Yg.T @ Yg)
    K = solve_linear(lhs, num, context="R + B'PB")
    K = solve_linear(den, K.T, context="predictive-objective Gram").T
    return FeedbackGain(K)


def fit_pil_h1(data, sys: LtiSystem, Q: Mat, R: Mat) -> FeedbackGain:
    """One-step predictive gain with G_1 tied to A + BK.

    K = (B'QB + R)^-1 [B'Q sum (y_{t+1} - A y_t) y_t' + R sum v_t y_t']
        (sum y_t y_t')^-1.
    """
    views = _views(data)
    A, B = sys.A, sys.B
    n, m = sys.n, sys.m
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    S = np.zeros((n, n))
    M = np.zeros((m, n))
    for vw in views:
        Y0 = vw.y[: vw.T]
        Y1 = vw.y[1 : vw.T + 1]
        S += Y0.T @ Y0
        M += B.T @ Q @ ((Y1 - Y0 @ A.T).T @ Y0) + R @ (vw.v.T @ Y0)
    K = solve_linear(B.T @ Q @ B + R, M, context="B'QB + R")
    K = solve_linear(S, K.T, context="one-step Gram").T
    return FeedbackGain(K)


def pil_objective(
    data,
    sys: LtiSystem,
    K: Mat,
    G: PredictorSetLinear,
    w: LossWeightsLinear,
) -> float:
    """Joint predictive-imitation objective (decayed, pooled)."""
    views = _views(data)
    T = views[0].T
    A, B = sys.A, sys.B
    M = A + B @ K
    total = 0.0
    for tau in range(1, w.H + 1):
        d = w.decay(tau)
        Gp = G.at(tau - 1)
        Gt = G.at(tau)
        for vw in views:
            Y0 = vw.y[: T - w.H + 1]
            Ytar = vw.y[tau : T - w.H + tau + 1]
            V = vw.v[tau - 1 : T - w.H + tau]
            ey = Ytar - Y0 @ Gt.T
            ev = V - (Y0 @ Gp.T) @ K.T
            wres = Y0 @ Gt.T - (Y0 @ Gp.T) @ M.T
            total += d * (
                np.einsum("bi,ij,bj->", ey, w.Q, ey)
                + np.einsum("bi,ij,bj->", ev, w.R, ev)
                + np.einsum("bi,ij,bj->", wres, w.P, wres)
            )
    return float(total)


def fit_pil_alternating(
    data,
    sys: LtiSystem,
    w: LossWeightsLinear,
    max_iters: int = 200,
    tol: float = 1e-10,
    G_init: Optional[PredictorSetLinear] = None,
) -> AlternatingResult:
    """Block coordinate descent on the joint objective over (K, G_1..G_H).

    The K-step is the fixed-predictor closed form; each G-step exactly
    minimizes the objective in G_tau holding everything else fixed
    (including the tau+1 terms where G_tau appears), so the loss is
    non-increasing across half-steps.
    """
    views = _views(data)
    T = views[0].T
    A, B = sys.A, sys.B
    n = sys.n
    H = w.H
    Q, R, P = w.Q, w.R, w.P
    if G_init is None:
        G = PredictorSetLinear([np.eye(n) for _ in range(H)])
    else:
        G = PredictorSetLinear([Gt.copy() for Gt in G_init.G])

    # pooled sums over t = 0..T-H (shared across tau)
    S = np.zeros((n, n))
    Ydata = [np.zeros((n, n)) for _ in range(H + 1)]  # sum y_{t+tau} y_t'
    Cdata = [None] * (H + 1)  # sum v_{t+tau} y_t'
    m = sys.m
    for tau in range(H + 1):
        Cdata[tau] = np.zeros((m, n))
    for vw in views:
        Y0 = vw.y[: T - H + 1]
        S += Y0.T @ Y0
        for tau in range(H + 1):
            Ydata[tau] += vw.y[tau : T - H + tau + 1].T @ Y0
            if tau <= H - 1:
                Cdata[tau] += vw.v[tau : T - H + tau + 1].T @ Y0

    loss_history = []
    K = fit_bc(views).K
    prev_params = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        # K-step
        K = fit_pil_fixed_G(views, sys, G, w).K
        loss_history.append(pil_objective(views, sys, K, G, w))
        # G-step, tau ascending
        M = A + B @ K
        for tau in range(1, H + 1):
            d_tau = w.decay(tau)
            Gp = G.at(tau - 1)
            L = d_tau * (Q + P)
            RHS = d_tau * (Q @ Ydata[tau] + P @ M @ Gp @ S)
            if tau < H:
                ratio = w.decay(tau + 1)
                L = L + ratio * (K.T @ R @ K + M.T @ P @ M)
                RHS = RHS + ratio * (
                    K.T @ R @ Cdata[tau] + M.T @ P @ G.G[tau] @ S
                )
            # L G S = RHS  ->  G = L^-1 RHS S^-1
            Gt = solve_linear(L, RHS, context="G-step weight")
            Gt = solve_linear(S, Gt.T, context="G-step Gram").T
            G.G[tau - 1] = Gt
        loss_history.append(pil_objective(views, sys, K, G, w))
        params = np.concatenate([K.ravel()] + [Gt.ravel() for Gt in G.G])
        if prev_params is not None:
            if np.max(np.abs(params - prev_params)) < tol:
                converged = True
                break
        prev_params = params
    return AlternatingResult(
        gain=FeedbackGain(K),
        predictors=G,
        converged=converged,
        n_iters=it,
        loss_history=loss_history,
    )


def compare_pil_bc(
    dataset: TrajectoryDataset,
    sys: LtiSystem,
    Q: Mat,
    R: Mat,
    sigma_xi: Mat,
    sigma_eta: Mat,
) -> ComparisonReport:
    """Noise-term comparison for the H=1 setting (simulation mode only).

    omega_pil = sum B'Q (xi_{t+1} - A xi_t) y_t',
    omega_bc  = sum B'QB eta_t y_t'; the comparison condition is
    ||B'Q(I-A)|| sqrt(tr Sigma_xi) <= ||B'QB|| sqrt(tr Sigma_eta).
    """
    A, B = sys.A, sys.B
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    BtQ = B.T @ Q
    BtQB = B.T @ Q @ B
    omega_pil = np.zeros((sys.m, sys.n))
    omega_bc = np.zeros((sys.m, sys.n))
    for tr in dataset.trajectories:
        if tr.xi is None or tr.eta is None:
            raise ValueError("noise records required for comparison")
        Y0 = tr.y[: tr.T]
        Xi0 = tr.xi[: tr.T]
        Xi1 = tr.xi[1 : tr.T + 1]
        omega_pil += BtQ @ ((Xi1 - Xi0 @ A.T).T @ Y0)
        omega_bc += BtQB @ (tr.eta.T @ Y0)
    lhs = spectral_norm(BtQ @ (np.eye(sys.n) - A)) * np.sqrt(
        np.trace(np.atleast_2d(sigma_xi))
    )
    rhs = spectral_norm(BtQB) * np.sqrt(np.trace(np.atleast_2d(sigma_eta)))
    return ComparisonReport(
        omega_pil=omega_pil,
        omega_bc=omega_bc,
        lhs=float(lhs),
        rhs=float(rhs),
        condition_holds=bool(lhs <= rhs),
    )
