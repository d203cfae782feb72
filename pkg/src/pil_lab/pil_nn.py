"""Neural trainers for behavior cloning, rollout-based imitation, and
predictive imitation with multi-step predictors.

All training operates on length-(H+1) trajectory chunks in raw state
space: encoded observations are decoded once at chunk-assembly time so
that predicted states, dynamics evaluations, and deployed policies share
one input space.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import (
    AdamState,
    Mlp,
    MlpSpec,
    Node,
    ParamStore,
    Tape,
    adam_step,
    backward,
    cosine_lr,
)
from .lti_world import TrajectoryDataset
from .nonlinear_world import ObsEncoder
from .numkit import Mat, RngStream

_MODES = ("pil", "rollout", "bc")


@dataclass
class PilLossConfig:
    Q: Mat
    R: Mat
    P: Mat
    H: int
    alpha: float = 0.9
    mode: str = "pil"
    dynamics_gradient: bool = True

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=np.float64))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        self.P = np.atleast_2d(np.asarray(self.P, dtype=np.float64))
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")


@dataclass
class LossBreakdown:
    state_err: float
    input_err: float
    consistency: float

    @property
    def total(self) -> float:
        return self.state_err + self.input_err + self.consistency


@dataclass
class PilModel:
    """Encoder + per-horizon predictor heads + policy over one ParamStore.

    Rollout/BC variants carry only the policy (encoder and predictors are
    None/empty); the predictors and encoder are training-time scaffolding
    and are never used at deployment.
    """

    policy: Mlp
    store: ParamStore
    encoder: Optional[Mlp] = None
    predictors: list[Mlp] = field(default_factory=list)

    @property
    def H(self) -> int:
        return len(self.predictors)


def build_pil_model(
    obs_dim: int,
    state_dim: int,
    input_dim: int,
    H: int,
    rng: RngStream,
    latent_dim: int = 32,
    encoder_hidden: tuple[int, ...] = (128, 128),
    predictor_hidden: tuple[int, ...] = (128,),
    policy_hidden: tuple[int, ...] = (64, 64),
) -> PilModel:
    store = ParamStore()
    encoder = Mlp(
        MlpSpec((obs_dim, *encoder_hidden, latent_dim)),
        store,
        "encoder",
        rng.substream(0),
    )
    predictors = [
        Mlp(
            MlpSpec((latent_dim, *predictor_hidden, state_dim)),
            store,
            f"predictor_{tau}",
            rng.substream(tau),
        )
        for tau in range(1, H + 1)
    ]
    policy = Mlp(
        MlpSpec((state_dim, *policy_hidden, input_dim)),
        store,
        "policy",
        rng.substream(H + 1),
    )
    return PilModel(policy=policy, store=store, encoder=encoder,
                    predictors=predictors)


def build_policy_model(
    state_dim: int,
    input_dim: int,
    rng: RngStream,
    policy_hidden: tuple[int, ...] = (64, 64),
) -> PilModel:
    store = ParamStore()
    policy = Mlp(
        MlpSpec((state_dim, *policy_hidden, input_dim)),
        store,
        "policy",
        rng.substream(0),
    )
    return PilModel(policy=policy, store=store)


# ---------------------------------------------------------------------------
# Chunk assembly
# ---------------------------------------------------------------------------


@dataclass
class ChunkSet:
    """Stacked length-(H+1) windows pooled over all trajectories.

    x0:    (N, n)    raw-decoded measurement at the chunk start
    y0:    (N, p)    stored (possibly encoded) measurement at the start
    xtar:  (H, N, n) raw-decoded measurement targets t+1 .. t+H
    vtar:  (H, N, m) input-observation targets t .. t+H-1
    """

    x0: np.ndarray
    y0: np.ndarray
    xtar: np.ndarray
    vtar: np.ndarray

    def __len__(self) -> int:
        return self.x0.shape[0]

    def select(self, idx) -> "ChunkSet":
        return ChunkSet(
            self.x0[idx], self.y0[idx], self.xtar[:, idx], self.vtar[:, idx]
        )


def make_chunks(dataset: TrajectoryDataset, H: int,
                encoder: ObsEncoder = ObsEncoder("raw")) -> ChunkSet:
    """One chunk per valid offset: t = 0 .. T-H, so T-H+1 per trajectory."""
    views = dataset.observations()
    T = views[0].T
    if T < H:
        raise ValueError(f"T={T} < H={H}")
    x0s, y0s, xts, vts = [], [], [], []
    for vw in views:
        raw = encoder.decode(vw.y)
        starts = np.arange(T - H + 1)
        x0s.append(raw[starts])
        y0s.append(vw.y[starts])
        xts.append(np.stack([raw[starts + tau] for tau in range(1, H + 1)]))
        vts.append(np.stack([vw.v[starts + tau - 1] for tau in range(1, H + 1)]))
    return ChunkSet(
        x0=np.concatenate(x0s),
        y0=np.concatenate(y0s),
        xtar=np.concatenate(xts, axis=1),
        vtar=np.concatenate(vts, axis=1),
    )


def make_bc_pairs(dataset: TrajectoryDataset,
                  encoder: ObsEncoder = ObsEncoder("raw")):
    """(decoded measurement, input observation) pairs, all t = 0..T-1."""
    xs, vs = [], []
    for vw in dataset.observations():
        xs.append(encoder.decode(vw.y)[: vw.T])
        vs.append(vw.v)
    return np.concatenate(xs), np.concatenate(vs)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _maybe_stop(tape: Tape, node: Node, cfg: PilLossConfig) -> Node:
    return node if cfg.dynamics_gradient else tape.stop_gradient(node)


def _state_residual(tape: Tape, dyn, a: Node, b: Node) -> Node:
    """a - b, shifted onto the principal branch for dynamics with wrapped
    coordinates (the shift is a constant, so gradients pass through)."""
    d = tape.sub(a, b)
    offset_fn = getattr(dyn, "residual_offset", None)
    if offset_fn is not None:
        off = offset_fn(d.value)
        if np.any(off):
            d = tape.sub(d, tape.const(off))
    return d


def pil_chunk_loss(
    model: PilModel,
    dyn,
    batch: ChunkSet,
    cfg: PilLossConfig,
    tape: Tape,
) -> tuple[LossBreakdown, Node]:
    """Predictive loss over one chunk minibatch (mean over chunks)."""
    H = cfg.H
    if batch.xtar.shape[0] != H:
        raise ValueError(f"chunk horizon {batch.xtar.shape[0]} != H={H}")
    B = len(batch)
    z = model.encoder.forward(tape, tape.const(batch.y0))
    x_pred = [tape.const(batch.x0)]
    for tau in range(1, H + 1):
        x_pred.append(model.predictors[tau - 1].forward(tape, z))
    state_terms, input_terms, cons_terms = [], [], []
    for tau in range(1, H + 1):
        d = cfg.alpha ** (tau - 1) / B
        u_pred = model.policy.forward(tape, x_pred[tau - 1])
        fx = _maybe_stop(tape, dyn.step_tape(tape, x_pred[tau - 1], u_pred), cfg)
        w = _state_residual(tape, dyn, x_pred[tau], fx)
        ey = _state_residual(tape, dyn, tape.const(batch.xtar[tau - 1]),
                             x_pred[tau])
        ev = tape.sub(tape.const(batch.vtar[tau - 1]), u_pred)
        state_terms.append(tape.scale(tape.square_norm_weighted(ey, cfg.Q), d))
        input_terms.append(tape.scale(tape.square_norm_weighted(ev, cfg.R), d))
        cons_terms.append(tape.scale(tape.square_norm_weighted(w, cfg.P), d))
    s_node = tape.add_n(state_terms)
    i_node = tape.add_n(input_terms)
    c_node = tape.add_n(cons_terms)
    total = tape.add(tape.add(s_node, i_node), c_node)
    bd = LossBreakdown(
        state_err=float(s_node.value),
        input_err=float(i_node.value),
        consistency=float(c_node.value),
    )
    return bd, total


def rollout_chunk_loss(
    model: PilModel,
    dyn,
    batch: ChunkSet,
    cfg: PilLossConfig,
    tape: Tape,
) -> tuple[LossBreakdown, Node]:
    """Unrolled-dynamics loss: states come from iterating f with the policy."""
    H = cfg.H
    if batch.xtar.shape[0] != H:
        raise ValueError(f"chunk horizon {batch.xtar.shape[0]} != H={H}")
    B = len(batch)
    x = tape.const(batch.x0)
    state_terms, input_terms = [], []
    for tau in range(1, H + 1):
        d = cfg.alpha ** (tau - 1) / B
        u = model.policy.forward(tape, x)
        x = _maybe_stop(tape, dyn.step_tape(tape, x, u), cfg)
        ey = _state_residual(tape, dyn, tape.const(batch.xtar[tau - 1]), x)
        ev = tape.sub(tape.const(batch.vtar[tau - 1]), u)
        state_terms.append(tape.scale(tape.square_norm_weighted(ey, cfg.Q), d))
        input_terms.append(tape.scale(tape.square_norm_weighted(ev, cfg.R), d))
    s_node = tape.add_n(state_terms)
    i_node = tape.add_n(input_terms)
    total = tape.add(s_node, i_node)
    bd = LossBreakdown(
        state_err=float(s_node.value),
        input_err=float(i_node.value),
        consistency=0.0,
    )
    return bd, total


def bc_loss(
    model: PilModel,
    x_batch: np.ndarray,
    v_batch: np.ndarray,
    cfg: PilLossConfig,
    tape: Tape,
) -> tuple[LossBreakdown, Node]:
    B = x_batch.shape[0]
    u = model.policy.forward(tape, tape.const(x_batch))
    ev = tape.sub(tape.const(v_batch), u)
    i_node = tape.scale(tape.square_norm_weighted(ev, cfg.R), 1.0 / B)
    bd = LossBreakdown(
        state_err=0.0, input_err=float(i_node.value), consistency=0.0
    )
    return bd, i_node


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)

    def record(self, epoch: int, bd: LossBreakdown, lr: float) -> None:
        self.epochs.append(
            {
                "epoch": epoch,
                "state_err": bd.state_err,
                "input_err": bd.input_err,
                "consistency": bd.consistency,
                "total": bd.total,
                "lr": lr,
            }
        )

    @property
    def final_total(self) -> float:
        return self.epochs[-1]["total"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["epoch", "state_err", "input_err", "consistency", "total", "lr"]
            )
            for row in self.epochs:
                w.writerow(
                    [
                        row["epoch"],
                        repr(float(row["state_err"])),
                        repr(float(row["input_err"])),
                        repr(float(row["consistency"])),
                        repr(float(row["total"])),
                        repr(float(row["lr"])),
                    ]
                )


class TrainingDiverged(RuntimeError):
    pass


def train(
    model: PilModel,
    dyn,
    dataset: TrajectoryDataset,
    cfg: PilLossConfig,
    epochs: int,
    batch_size: int,
    rng: RngStream,
    lr_start: float = 5e-4,
    lr_end: float = 1e-8,
    encoder: ObsEncoder = ObsEncoder("raw"),
) -> TrainLog:
    """Minibatch Adam with a cosine learning-rate schedule.

    Chunks are sampled uniformly with replacement; the whole run is
    deterministic given the rng seed.
    """
    if cfg.mode == "bc":
        X, V = make_bc_pairs(dataset, encoder)
        N = X.shape[0]
    else:
        chunks = make_chunks(dataset, cfg.H, encoder)
        N = len(chunks)
    steps_per_epoch = max(1, N // batch_size)
    total_steps = epochs * steps_per_epoch
    adam = AdamState.for_store(model.store)
    log = TrainLog()
    step = 0
    for epoch in range(epochs):
        acc = np.zeros(3)
        lr = lr_start
        for _ in range(steps_per_epoch):
            idx = rng.integers(0, N, size=batch_size)
            lr = cosine_lr(step, total_steps, lr_start, lr_end)
            tape = Tape()
            if cfg.mode == "bc":
                bd, total = bc_loss(model, X[idx], V[idx], cfg, tape)
            elif cfg.mode == "rollout":
                bd, total = rollout_chunk_loss(
                    model, dyn, chunks.select(idx), cfg, tape
                )
            else:
                bd, total = pil_chunk_loss(
                    model, dyn, chunks.select(idx), cfg, tape
                )
            if not np.isfinite(bd.total):
                raise TrainingDiverged(
                    f"NaN loss at epoch {epoch}, step {step}, lr {lr:.3e}"
                )
            backward(tape, total)
            adam_step(model.store, adam, lr)
            acc += (bd.state_err, bd.input_err, bd.consistency)
            step += 1
        acc /= steps_per_epoch
        log.record(epoch, LossBreakdown(*acc), lr)
    return log


def deploy_policy(model: PilModel, decode=None):
    """Stateless closure mapping a noisy measurement to a control input.

    ``decode`` (optional) maps encoded observations to the raw state
    space the policy was trained in; the encoder and predictors are not
    used at deployment.
    """

    def policy(y: np.ndarray) -> np.ndarray:
        if decode is not None:
            y = decode(y)
        return model.policy.forward_np(y)

    return policy
