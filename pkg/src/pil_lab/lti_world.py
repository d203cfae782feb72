"""LTI systems, LQR expert synthesis, and noisy expert-trajectory data.

Sign convention: policies act as u = K x, so the Riccati-based gain is
the negated textbook LQR gain. Trajectories store T+1 states and T
inputs; noisy observations are kept alongside the true quantities so the
evaluation and theory modules can see ground truth while learners only
see (y, v) through observation views.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .numkit import Mat, NoiseModel, RngStream, solve_linear


@dataclass(frozen=True)
class LtiSystem:
    A: Mat
    B: Mat

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B rows {B.shape[0]} != state dim {A.shape[0]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("system matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class FeedbackGain:
    K: Mat

    def __post_init__(self):
        object.__setattr__(
            self, "K", np.atleast_2d(np.asarray(self.K, dtype=np.float64))
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.K.T


def example_system() -> LtiSystem:
    """The 2-state benchmark system used throughout the linear experiments."""
    A = np.array([[0.95, 0.05], [0.0, 0.95]])
    B = np.array([[0.0], [0.05]])
    return LtiSystem(A, B)


@dataclass
class Trajectory:
    """One trajectory: true (x, u) plus noisy observations (y, v).

    ``x`` has T+1 rows and ``u``/``v``/``eta`` have T rows; ``y`` and
    ``xi`` have T+1 rows (every state is observed). For encoded
    observations (nonlinear worlds) ``y`` may have a different column
    count than ``x``; ``xi`` is always recorded in raw state coordinates.
    """

    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        T = self.u.shape[0]
        if self.x.shape[0] != T + 1 or self.y.shape[0] != T + 1:
            raise ValueError("trajectory must store T+1 states for T inputs")
        if self.v.shape != self.u.shape or self.eta.shape != self.u.shape:
            raise ValueError("v/eta must match u shape")
        if self.xi.shape[0] != T + 1:
            raise ValueError("xi must have T+1 rows")

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class ObservationView:
    """What a learner is allowed to read: noisy (y, v) only."""

    y: np.ndarray
    v: np.ndarray

    @property
    def T(self) -> int:
        return self.v.shape[0]


@dataclass
class TrajectoryDataset:
    trajectories: list[Trajectory]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trajectories:
            t0 = self.trajectories[0]
            for tr in self.trajectories:
                if (tr.T, tr.n, tr.m, tr.y.shape[1]) != (
                    t0.T,
                    t0.n,
                    t0.m,
                    t0.y.shape[1],
                ):
                    raise ValueError("all trajectories must share dimensions")

    def __len__(self) -> int:
        return len(self.trajectories)

    def observations(self) -> list[ObservationView]:
        return [ObservationView(tr.y, tr.v) for tr in self.trajectories]


@dataclass(frozen=True)
class CoverageReport:
    phi_x: float


class RiccatiError(RuntimeError):
    pass


def lqr_gain(
    sys: LtiSystem,
    Qc: Mat,
    Rc: Mat,
    tol: float = 1e-12,
    max_iters: int = 100_000,
) -> FeedbackGain:
    """Infinite-horizon discrete LQR gain with the u = +Kx convention.

    Fixed-point iteration P <- Qc + A'PA - A'PB (Rc + B'PB)^-1 B'PA from
    P = Qc; adequate for the small systems used here.
    """
    A, B = sys.A, sys.B
    Qc = np.atleast_2d(np.asarray(Qc, dtype=np.float64))
    Rc = np.atleast_2d(np.asarray(Rc, dtype=np.float64))
    P = Qc.copy()
    for _ in range(max_iters):
        BtPA = B.T @ P @ A
        S = Rc + B.T @ P @ B
        P_next = Qc + A.T @ P @ A - BtPA.T @ solve_linear(S, BtPA)
        if not np.all(np.isfinite(P_next)) or np.max(np.abs(P_next)) > 1e100:
            raise RiccatiError(
                "Riccati iteration diverged (system not stabilizable?)"
            )
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P_next))):
            P = P_next
            break
        P = P_next
    else:
        raise RiccatiError(
            f"Riccati iteration did not converge within {max_iters} steps"
        )
    K = -solve_linear(Rc + B.T @ P @ B, B.T @ P @ A)
    rho = np.max(np.abs(np.linalg.eigvals(A + B @ K)))
    if rho >= 1.0:
        raise RiccatiError(f"closed loop not stable: spectral radius {rho:.6f}")
    return FeedbackGain(K)


def generate_expert_dataset(
    sys: LtiSystem,
    K: FeedbackGain,
    n_traj: int,
    T: int,
    x0_model: NoiseModel,
    xi_model: NoiseModel,
    eta_model: NoiseModel,
    rng: RngStream,
    meta_extra: Optional[dict] = None,
) -> TrajectoryDataset:
    """Roll the expert u = Kx on true states, recording noisy (y, v)."""
    n, m = sys.n, sys.m
    trajs = []
    for i in range(n_traj):
        sub = rng.substream(i)
        x = np.zeros((T + 1, n))
        u = np.zeros((T, m))
        x[0] = x0_model.sample(n, sub)
        for t in range(T):
            u[t] = K(x[t])
            x[t + 1] = sys.A @ x[t] + sys.B @ u[t]
        xi = xi_model.sample(n, sub, size=T + 1)
        eta = eta_model.sample(m, sub, size=T)
        trajs.append(Trajectory(x=x, u=u, y=x + xi, v=u + eta, xi=xi, eta=eta))
    meta = {
        "n": n,
        "m": m,
        "T": T,
        "n_traj": n_traj,
        "seed": rng.seed,
        "x0_model": _noise_meta(x0_model),
        "xi_model": _noise_meta(xi_model),
        "eta_model": _noise_meta(eta_model),
        "expert": {"kind": "linear_gain", "K": K.K.tolist()},
        "encoder": "raw",
    }
    if meta_extra:
        meta.update(meta_extra)
    return TrajectoryDataset(trajs, meta)


def rollout_learned(
    sys: LtiSystem,
    policy: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    T: int,
    xi_model: NoiseModel,
    rng: RngStream,
) -> Trajectory:
    """Closed loop with the learned policy acting on noisy measurements."""
    n, m = sys.n, sys.m
    x = np.zeros((T + 1, n))
    y = np.zeros((T + 1, n))
    u = np.zeros((T, m))
    xi = xi_model.sample(n, rng, size=T + 1)
    x[0] = np.asarray(x0, dtype=np.float64)
    for t in range(T + 1):
        y[t] = x[t] + xi[t]
        if t == T:
            break
        ut = np.atleast_1d(np.asarray(policy(y[t]), dtype=np.float64)).reshape(-1)
        if ut.shape[0] != m:
            raise ValueError(
                f"policy output dim {ut.shape[0]} != input dim {m}"
            )
        u[t] = ut
        x[t + 1] = sys.A @ x[t] + sys.B @ ut
    eta = np.zeros((T, m))
    return Trajectory(x=x, u=u, y=y, v=u + eta, xi=xi, eta=eta)


def check_coverage(dataset: TrajectoryDataset, H: int) -> CoverageReport:
    """Smallest eigenvalue of the normalized pooled true-state Gram matrix."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    T = dataset.trajectories[0].T
    if T < H:
        raise ValueError(f"T={T} < H={H}")
    n = dataset.trajectories[0].n
    gram = np.zeros((n, n))
    count = 0
    for tr in dataset.trajectories:
        X = tr.x[: T - H + 1]
        gram += X.T @ X
        count += X.shape[0]
    phi = float(np.linalg.eigvalsh(gram / count).min())
    return CoverageReport(phi_x=max(phi, 0.0))


# ---------------------------------------------------------------------------
# Dataset file format: CSV + JSON metadata sidecar
# ---------------------------------------------------------------------------


def _noise_meta(model: NoiseModel) -> dict:
    if model.kind == "none":
        return {"kind": "none"}
    if model.kind == "gaussian":
        return {"kind": "gaussian", "cov": model.scale.tolist()}
    return {"kind": "uniform", "bounds": model.scale.tolist()}


def noise_from_meta(d: dict) -> NoiseModel:
    if d["kind"] == "none":
        return NoiseModel.none()
    if d["kind"] == "gaussian":
        return NoiseModel.gaussian(np.asarray(d["cov"]))
    return NoiseModel.uniform(np.asarray(d["bounds"]))


def meta_path_for(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(p.suffix + ".meta.json")


def save_dataset(dataset: TrajectoryDataset, csv_path) -> None:
    """One CSV per dataset plus a JSON sidecar with dimensions and models.

    Columns: traj, t, y_0..y_{p-1}, v_0..v_{m-1}, x_0..x_{n-1},
    u_0..u_{m-1}. Rows at t = T leave v and u blank (no final action).
    """
    csv_path = Path(csv_path)
    tr0 = dataset.trajectories[0]
    p = tr0.y.shape[1]
    n, m, T = tr0.n, tr0.m, tr0.T
    header = (
        ["traj", "t"]
        + [f"y_{i}" for i in range(p)]
        + [f"v_{i}" for i in range(m)]
        + [f"x_{i}" for i in range(n)]
        + [f"u_{i}" for i in range(m)]
    )
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, tr in enumerate(dataset.trajectories):
            for t in range(T + 1):
                row = [k, t] + [repr(float(val)) for val in tr.y[t]]
                if t < T:
                    row += [repr(float(val)) for val in tr.v[t]]
                else:
                    row += [""] * m
                row += [repr(float(val)) for val in tr.x[t]]
                if t < T:
                    row += [repr(float(val)) for val in tr.u[t]]
                else:
                    row += [""] * m
                w.writerow(row)
    meta = dict(dataset.meta)
    meta.setdefault("n", n)
    meta.setdefault("m", m)
    meta.setdefault("T", T)
    meta["obs_dim"] = p
    meta["n_traj"] = len(dataset)
    with open(meta_path_for(csv_path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(csv_path) -> TrajectoryDataset:
    csv_path = Path(csv_path)
    with open(meta_path_for(csv_path)) as fh:
        meta = json.load(fh)
    n, m, T = meta["n"], meta["m"], meta["T"]
    p = meta.get("obs_dim", n)
    with open(csv_path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        expected_cols = 2 + p + m + n + m
        if len(header) != expected_cols:
            raise ValueError(
                f"CSV column count {len(header)} does not match metadata "
                f"dimensions (expected {expected_cols})"
            )
        rows = list(r)
    n_traj = meta["n_traj"]
    if len(rows) != n_traj * (T + 1):
        raise ValueError("CSV row count does not match metadata")
    trajs = []
    idx = 0
    for k in range(n_traj):
        y = np.zeros((T + 1, p))
        v = np.zeros((T, m))
        x = np.zeros((T + 1, n))
        u = np.zeros((T, m))
        for t in range(T + 1):
            row = rows[idx]
            idx += 1
            if int(row[0]) != k or int(row[1]) != t:
                raise ValueError("CSV trajectory/time indices out of order")
            vals = row[2:]
            y[t] = [float(s) for s in vals[:p]]
            if t < T:
                v[t] = [float(s) for s in vals[p : p + m]]
            x[t] = [float(s) for s in vals[p + m : p + m + n]]
            if t < T:
                u[t] = [float(s) for s in vals[p + m + n :]]
        if meta.get("encoder", "raw") == "raw":
            xi = y - x
        else:
            from .nonlinear_world import ObsEncoder

            xi = ObsEncoder(meta["encoder"]).decode(y) - x
        trajs.append(Trajectory(x=x, u=u, y=y, v=v, xi=xi, eta=v - u))
    return TrajectoryDataset(trajs, meta)
