"""Dense linear algebra, seeded RNG streams, and measurement-noise models.

All arithmetic is 64-bit. Matrices are plain numpy arrays in row-major
(C) order; ``Mat`` is an alias kept for readability in signatures.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

Mat = np.ndarray

RCOND_FLOOR = 1e-12


class SingularMatrixError(RuntimeError):
    """Raised when a linear solve hits a matrix singular to tolerance."""

    def __init__(self, rcond: float, context: str = ""):
        msg = (
            f"matrix singular to tolerance: reciprocal condition "
            f"{rcond:.3e} < {RCOND_FLOOR:g}"
        )
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)
        self.rcond = rcond


def solve_linear(A: Mat, B: Mat, context: str = "") -> Mat:
    """Solve A @ X = B via LU factorization (never an explicit inverse).

    Raises SingularMatrixError when A's reciprocal condition number falls
    below 1e-12.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"solve_linear: A must be square, got {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise ValueError(
            f"solve_linear: incompatible shapes A={A.shape}, B={B.shape}"
        )
    s = np.linalg.svd(A, compute_uv=False)
    rcond = float(s[-1] / s[0]) if s[0] > 0 else 0.0
    if rcond < RCOND_FLOOR:
        raise SingularMatrixError(rcond, context)
    return np.linalg.solve(A, B)


def spectral_norm(M: Mat, tol: float = 1e-10, max_iters: int = 50_000) -> float:
    """Largest singular value of M via power iteration on M^T M."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.size == 0 or not np.any(M):
        return 0.0
    G = M.T @ M
    d = G.shape[0]
    # deterministic start; small ramp breaks symmetry against unlucky
    # orthogonal starts
    v = np.ones(d) + 1e-3 * np.arange(d)
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    for _ in range(max_iters):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam = float(v @ (G @ v))
        if abs(lam - lam_prev) <= tol * max(abs(lam), 1e-300):
            return float(np.sqrt(max(lam, 0.0)))
        lam_prev = lam
    return float(np.sqrt(max(lam_prev, 0.0)))


class RngStream:
    """Counter-based (Philox) random stream, bit-reproducible per seed.

    Substreams derived via ``substream(i)`` are statistically independent
    by construction, so per-trajectory / per-seed work can run in any
    order or in parallel without affecting results.
    """

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.spawn_key + (int(index),))

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key})"


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Additive measurement-noise model.

    kind:
      - "gaussian": ``scale`` is a (d, d) covariance matrix (symmetric PSD)
      - "uniform":  ``scale`` is a (d,) vector of per-coordinate half-widths,
                    coordinates drawn independently in [-b_i, b_i]
      - "none":     zero vector
    """

    kind: str
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian":
            cov = np.atleast_2d(np.asarray(self.scale, dtype=np.float64))
            if cov.shape[0] != cov.shape[1]:
                raise ValueError("gaussian covariance must be square")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ValueError("gaussian covariance must be symmetric")
            w = np.linalg.eigvalsh(cov)
            if w.min() < -1e-10 * max(w.max(), 1.0):
                raise ValueError("gaussian covariance must be PSD")
            object.__setattr__(self, "scale", cov)
        elif self.kind == "uniform":
            b = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
            if np.any(b < 0):
                raise ValueError("uniform bounds must be nonnegative")
            object.__setattr__(self, "scale", b)

    # ---- constructors -------------------------------------------------

    @staticmethod
    def none() -> "NoiseModel":
        return NoiseModel("none")

    @staticmethod
    def gaussian(cov: Mat) -> "NoiseModel":
        return NoiseModel("gaussian", np.asarray(cov, dtype=np.float64))

    @staticmethod
    def isotropic_gaussian(var: float, dim: int) -> "NoiseModel":
        return NoiseModel("gaussian", var * np.eye(dim))

    @staticmethod
    def uniform(bounds) -> "NoiseModel":
        return NoiseModel("uniform", np.asarray(bounds, dtype=np.float64))

    # ---- queries ------------------------------------------------------

    @property
    def dim(self) -> Optional[int]:
        if self.kind == "none":
            return None
        return self.scale.shape[0]

    def covariance(self, dim: int) -> Mat:
        """Covariance of a single draw (uniform: diag(b_i^2 / 3))."""
        if self.kind == "none":
            return np.zeros((dim, dim))
        if self.kind == "gaussian":
            return self.scale.copy()
        return np.diag(self.scale**2 / 3.0)

    def sample(self, dim: int, rng: RngStream, size: Optional[int] = None):
        """Draw one (dim,) sample or, with ``size``, a (size, dim) batch."""
        if self.kind != "none" and self.scale.shape[0] != dim:
            raise ValueError(
                f"noise model dimension {self.scale.shape[0]} != requested {dim}"
            )
        shape = (dim,) if size is None else (size, dim)
        if self.kind == "none":
            return np.zeros(shape)
        if self.kind == "uniform":
            z = rng.uniform(-1.0, 1.0, shape)
            return z * self.scale
        # gaussian: eigen-factor handles PSD-but-singular covariances
        w, V = np.linalg.eigh(self.scale)
        factor = V * np.sqrt(np.clip(w, 0.0, None))
        z = rng.normal(shape)
        return z @ factor.T


def sample_noise(model: NoiseModel, dim: int, rng: RngStream,
                 size: Optional[int] = None):
    return model.sample(dim, rng, size)
