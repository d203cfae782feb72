"""Reverse-mode automatic differentiation over a dynamic tape.

Nodes carry numpy array values; ops are vectorized so a whole minibatch
flows through one tape. Parameters live in a flat ParamStore; backward
accumulates adjoints straight into the store's gradient buffer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .numkit import RngStream


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


class ParamStore:
    """Flat parameter vector with a matching gradient buffer.

    Named segments map to (slice, shape) pairs; groups are expressed by
    name prefixes like "encoder/", "predictor_3/", "policy/".
    """

    def __init__(self):
        self.flat = np.zeros(0)
        self.grad = np.zeros(0)
        self.segments: dict[str, tuple[slice, tuple[int, ...]]] = {}

    @property
    def size(self) -> int:
        return self.flat.size

    def allocate(self, name: str, shape: tuple[int, ...], init: np.ndarray) -> str:
        if name in self.segments:
            raise ValueError(f"segment {name!r} already allocated")
        init = np.asarray(init, dtype=np.float64).reshape(shape)
        start = self.flat.size
        self.flat = np.concatenate([self.flat, init.ravel()])
        self.grad = np.zeros_like(self.flat)
        self.segments[name] = (slice(start, start + init.size), shape)
        return name

    def value(self, name: str) -> np.ndarray:
        sl, shape = self.segments[name]
        return self.flat[sl].reshape(shape)

    def set_value(self, name: str, value: np.ndarray) -> None:
        sl, shape = self.segments[name]
        self.flat[sl] = np.asarray(value, dtype=np.float64).reshape(shape).ravel()

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def group_indices(self, prefix: str) -> np.ndarray:
        idx = []
        for name, (sl, _) in self.segments.items():
            if name.startswith(prefix):
                idx.append(np.arange(sl.start, sl.stop))
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


@dataclass
class Node:
    idx: int
    value: np.ndarray
    parents: tuple[int, ...] = ()
    # vjp(g) -> per-parent adjoint contributions (same order as parents)
    vjp: Optional[Callable] = None
    # leaf binding into a ParamStore
    binding: Optional[tuple[ParamStore, str]] = None

    @property
    def shape(self):
        return self.value.shape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce gradient g to the given (broadcast-source) shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class ShapeError(ValueError):
    pass


class Tape:
    """Append-only computation tape; node inputs reference earlier nodes."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _push(self, value, parents=(), vjp=None, binding=None) -> Node:
        node = Node(
            idx=len(self.nodes),
            value=np.asarray(value, dtype=np.float64),
            parents=tuple(p.idx for p in parents),
            vjp=vjp,
            binding=binding,
        )
        self.nodes.append(node)
        return node

    # ---- leaves -------------------------------------------------------

    def const(self, value) -> Node:
        return self._push(value)

    def param(self, store: ParamStore, name: str) -> Node:
        return self._push(store.value(name), binding=(store, name))

    # ---- ops ----------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        try:
            val = a.value + b.value
        except ValueError as exc:
            raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc
        sa, sb = a.shape, b.shape
        return self._push(
            val,
            (a, b),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )

    def sub(self, a: Node, b: Node) -> Node:
        try:
            val = a.value - b.value
        except ValueError as exc:
            raise ShapeError(f"sub: {a.shape} vs {b.shape}") from exc
        sa, sb = a.shape, b.shape
        return self._push(
            val,
            (a, b),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        )

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        av, bv = a.value, b.value
        return self._push(
            av @ bv,
            (a, b),
            lambda g: (g @ bv.T, av.T @ g),
        )

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._push(c * a.value, (a,), lambda g: (c * g,))

    def mul(self, a: Node, b: Node) -> Node:
        try:
            val = a.value * b.value
        except ValueError as exc:
            raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc
        av, bv = a.value, b.value
        sa, sb = a.shape, b.shape
        return self._push(
            val,
            (a, b),
            lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)),
        )

    def leaky_relu(self, a: Node, slope: float = 0.01) -> Node:
        mask = a.value > 0
        val = np.where(mask, a.value, slope * a.value)
        return self._push(
            val, (a,), lambda g: (np.where(mask, g, slope * g),)
        )

    def relu(self, a: Node) -> Node:
        return self.leaky_relu(a, slope=0.0)

    def tanh(self, a: Node) -> Node:
        val = np.tanh(a.value)
        return self._push(val, (a,), lambda g: (g * (1.0 - val**2),))

    def sin(self, a: Node) -> Node:
        cv = np.cos(a.value)
        return self._push(np.sin(a.value), (a,), lambda g: (g * cv,))

    def cos(self, a: Node) -> Node:
        sv = np.sin(a.value)
        return self._push(np.cos(a.value), (a,), lambda g: (-g * sv,))

    def clip(self, a: Node, lo: float, hi: float) -> Node:
        inside = (a.value > lo) & (a.value < hi)
        val = np.clip(a.value, lo, hi)
        return self._push(val, (a,), lambda g: (np.where(inside, g, 0.0),))

    def slice_cols(self, a: Node, j0: int, j1: int) -> Node:
        if a.value.ndim != 2:
            raise ShapeError(f"slice_cols: need 2-D, got {a.shape}")
        shape = a.shape

        def vjp(g):
            full = np.zeros(shape)
            full[:, j0:j1] = g
            return (full,)

        return self._push(a.value[:, j0:j1], (a,), vjp)

    def concat_cols(self, parts: Sequence[Node]) -> Node:
        widths = [p.shape[1] for p in parts]
        offsets = np.cumsum([0] + widths)

        def vjp(g):
            return tuple(
                g[:, offsets[i] : offsets[i + 1]] for i in range(len(widths))
            )

        return self._push(
            np.concatenate([p.value for p in parts], axis=1), tuple(parts), vjp
        )

    def square_norm_weighted(self, x: Node, W: np.ndarray) -> Node:
        """sum over rows of x_i' W x_i (scalar node)."""
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        xv = np.atleast_2d(x.value)
        if xv.shape[1] != W.shape[0]:
            raise ShapeError(
                f"square_norm_weighted: x {x.shape} vs W {W.shape}"
            )
        val = np.einsum("bi,ij,bj->", xv, W, xv)
        Wsym = W + W.T
        xshape = x.shape

        def vjp(g):
            return ((float(g) * (xv @ Wsym)).reshape(xshape),)

        return self._push(val, (x,), vjp)

    def sum(self, a: Node) -> Node:
        shape = a.shape
        return self._push(
            a.value.sum(), (a,), lambda g: (np.full(shape, float(g)),)
        )

    def stop_gradient(self, a: Node) -> Node:
        """Forwards the value unchanged; blocks all adjoint flow."""
        return self._push(a.value, (), None)

    def add_n(self, nodes: Sequence[Node]) -> Node:
        out = nodes[0]
        for nd in nodes[1:]:
            out = self.add(out, nd)
        return out


def backward(tape: Tape, root: Node) -> None:
    """Accumulate d(root)/d(param) into each bound ParamStore's grad."""
    if np.asarray(root.value).size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    adjoints: dict[int, np.ndarray] = {
        root.idx: np.ones_like(np.asarray(root.value, dtype=np.float64))
    }
    for node in reversed(tape.nodes[: root.idx + 1]):
        g = adjoints.pop(node.idx, None)
        if g is None:
            continue
        if node.binding is not None:
            store, name = node.binding
            sl, shape = store.segments[name]
            store.grad[sl] += g.reshape(shape).ravel()
        if node.vjp is None:
            continue
        for pid, pg in zip(node.parents, node.vjp(g)):
            if pid in adjoints:
                adjoints[pid] = adjoints[pid] + pg
            else:
                adjoints[pid] = pg


# ---------------------------------------------------------------------------
# MLP layers
# ---------------------------------------------------------------------------


_ACTIVATIONS = ("leaky_relu", "relu", "tanh", "linear")


@dataclass(frozen=True)
class MlpSpec:
    """widths includes input and output sizes: [d_in, h1, ..., d_out]."""

    widths: tuple[int, ...]
    hidden_activation: str = "leaky_relu"
    output_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise ValueError("widths must list >= 2 positive sizes")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.output_activation!r}")


class Mlp:
    """MLP whose weights live in a shared ParamStore under a name prefix.

    Initialization: per-layer uniform in +-1/sqrt(fan_in), seeded.
    """

    LEAKY_SLOPE = 0.01

    def __init__(self, spec: MlpSpec, store: ParamStore, prefix: str,
                 rng: RngStream):
        self.spec = spec
        self.store = store
        self.prefix = prefix
        self.layer_names: list[tuple[str, str]] = []
        for i, (fan_in, fan_out) in enumerate(
            zip(spec.widths[:-1], spec.widths[1:])
        ):
            a = 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-a, a, (fan_in, fan_out))
            b = rng.uniform(-a, a, (fan_out,))
            wname = store.allocate(f"{prefix}/layer{i}/W", (fan_in, fan_out), W)
            bname = store.allocate(f"{prefix}/layer{i}/b", (fan_out,), b)
            self.layer_names.append((wname, bname))

    @classmethod
    def from_store(cls, spec: MlpSpec, store: ParamStore, prefix: str) -> "Mlp":
        """Bind to segments already present in the store (checkpoint load)."""
        obj = cls.__new__(cls)
        obj.spec = spec
        obj.store = store
        obj.prefix = prefix
        obj.layer_names = []
        for i in range(len(spec.widths) - 1):
            wname = f"{prefix}/layer{i}/W"
            bname = f"{prefix}/layer{i}/b"
            if wname not in store.segments or bname not in store.segments:
                raise KeyError(f"missing checkpoint segment for {prefix!r}")
            obj.layer_names.append((wname, bname))
        return obj

    def _act(self, tape: Tape, x: Node, kind: str) -> Node:
        if kind == "linear":
            return x
        if kind == "tanh":
            return tape.tanh(x)
        if kind == "relu":
            return tape.relu(x)
        return tape.leaky_relu(x, self.LEAKY_SLOPE)

    def forward(self, tape: Tape, x: Node) -> Node:
        h = x
        last = len(self.layer_names) - 1
        for i, (wname, bname) in enumerate(self.layer_names):
            W = tape.param(self.store, wname)
            b = tape.param(self.store, bname)
            h = tape.add(tape.matmul(h, W), b)
            kind = (
                self.spec.output_activation
                if i == last
                else self.spec.hidden_activation
            )
            h = self._act(tape, h, kind)
        return h

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Pure-numpy forward pass (deployment path, no tape)."""
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        last = len(self.layer_names) - 1
        for i, (wname, bname) in enumerate(self.layer_names):
            h = h @ self.store.value(wname) + self.store.value(bname)
            kind = (
                self.spec.output_activation
                if i == last
                else self.spec.hidden_activation
            )
            if kind == "tanh":
                h = np.tanh(h)
            elif kind == "relu":
                h = np.maximum(h, 0.0)
            elif kind == "leaky_relu":
                h = np.where(h > 0, h, self.LEAKY_SLOPE * h)
        return h[0] if squeeze else h


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_store(store: ParamStore) -> "AdamState":
        return AdamState(
            m=np.zeros(store.size), v=np.zeros(store.size)
        )


def adam_step(store: ParamStore, state: AdamState, lr: float) -> None:
    g = store.grad
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient (training divergence)")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    mhat = state.m / (1 - state.beta1**state.step)
    vhat = state.v / (1 - state.beta2**state.step)
    store.flat -= lr * mhat / (np.sqrt(vhat) + state.eps)
    store.zero_grad()


def cosine_lr(step: int, total: int, lr_start: float = 5e-4,
              lr_end: float = 1e-8) -> float:
    if total <= 0:
        raise ValueError("total steps must be positive")
    if not (0 <= step <= total):
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr_end + 0.5 * (lr_start - lr_end) * (
        1.0 + np.cos(np.pi * step / total)
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(store: ParamStore, path, specs: Optional[dict] = None) -> None:
    """Self-describing checkpoint: flat vector + segment map + specs."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "segments": {
            name: {"start": sl.start, "stop": sl.stop, "shape": list(shape)}
            for name, (sl, shape) in store.segments.items()
        },
        "specs": specs or {},
    }
    np.savez(path, flat=store.flat, meta=json.dumps(meta, sort_keys=True))


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with np.load(path, allow_pickle=False) as data:
        flat = data["flat"]
        meta = json.loads(str(data["meta"]))
    if meta["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta['version']}")
    store = ParamStore()
    store.flat = np.asarray(flat, dtype=np.float64)
    store.grad = np.zeros_like(store.flat)
    store.segments = {
        name: (slice(d["start"], d["stop"]), tuple(d["shape"]))
        for name, d in meta["segments"].items()
    }
    return store, meta["specs"]
