"""Optimizers: full-matrix Adam for camera fitting, normalized momentum SGD
for remeshing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient

MAX_FULL_MATRIX_DIM = 64


def inv_sqrt_psd(V, eps):
    """``(V + eps I)^(-1/2)`` for symmetric (..., d, d) matrices.

    Eigenvalues are clamped at zero first, so tiny negative values from
    round-off never produce NaNs.
    """
    w, U = np.linalg.eigh(V)
    w = 1.0 / np.sqrt(np.clip(w, 0.0, None) + eps)
    return (U * w[..., None, :]) @ np.swapaxes(U, -1, -2)


def _check_grad(grad):
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains NaN or Inf")


@dataclass
class FullMatrixAdamState:
    """Adam whose second moment is the full ``d x d`` outer-product average.

    ``m`` and ``V`` may carry a leading batch axis, in which case every
    step updates all members independently (shared step counter).
    """

    dim: int
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    batch: int | None = None
    t: int = 0
    m: np.ndarray = field(default=None)
    V: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.dim > MAX_FULL_MATRIX_DIM:
            raise ValueError(f"dimension {self.dim} exceeds {MAX_FULL_MATRIX_DIM}")
        lead = () if self.batch is None else (self.batch,)
        if self.m is None:
            self.m = np.zeros(lead + (self.dim,))
        if self.V is None:
            self.V = np.zeros(lead + (self.dim, self.dim))

    def select(self, idx) -> None:
        """Keep only the batch members in ``idx`` (used when pruning)."""
        self.m = self.m[idx]
        self.V = self.V[idx]
        self.batch = len(self.m)


def adam_fm_step(state: FullMatrixAdamState, params, grad):
    """One update ``theta - lr * (V_hat + eps I)^(-1/2) m_hat``; returns the
    new parameters and advances ``state`` in place."""
    params = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_grad(g)
    if g.shape != state.m.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state {state.m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * g
    state.V = b2 * state.V + (1.0 - b2) * (g[..., :, None] * g[..., None, :])
    m_hat = state.m / (1.0 - b1**state.t)
    V_hat = state.V / (1.0 - b2**state.t)
    P = inv_sqrt_psd(V_hat, state.eps)
    step = (P @ m_hat[..., None])[..., 0]
    return params - state.lr * step


def diagonal_adam_step(state: FullMatrixAdamState, params, grad):
    """Diagonal counterpart of ``adam_fm_step`` (same epsilon placement:
    ``m_hat / sqrt(v_hat + eps)``); only the diagonal of ``state.V`` is used."""
    params = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_grad(g)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * g
    diag = np.diagonal(state.V, axis1=-2, axis2=-1)
    new_diag = b2 * diag + (1.0 - b2) * g * g
    state.V = np.zeros_like(state.V)
    idx = np.arange(state.dim)
    state.V[..., idx, idx] = new_diag
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = new_diag / (1.0 - b2**state.t)
    return params - state.lr * m_hat / np.sqrt(v_hat + state.eps)


@dataclass
class MomentumState:
    """SGD with momentum on unit-normalized gradients.

    The learning rate warms up linearly from ``lr_start`` to ``lr_peak``
    over ``warmup`` steps, then decays geometrically by ``decay`` per step;
    ``done`` turns true once it drops below ``lr_stop``.
    """

    beta: float = 0.9
    lr_start: float = 1e-4
    lr_peak: float = 5e-4
    warmup: int = 500
    decay: float = 0.9999
    lr_stop: float = 1e-4
    step_count: int = 0
    velocity: np.ndarray | None = None

    def lr_at(self, k: int) -> float:
        if k <= self.warmup:
            return self.lr_start + (self.lr_peak - self.lr_start) * k / self.warmup
        return self.lr_peak * self.decay ** (k - self.warmup)

    @property
    def lr(self) -> float:
        return self.lr_at(self.step_count)

    @property
    def done(self) -> bool:
        return self.lr < self.lr_stop

    def total_steps(self) -> int:
        """Number of steps taken before ``done`` becomes true."""
        if self.lr_at(0) < self.lr_stop:
            return 0
        n = self.warmup + int(np.floor(np.log(self.lr_stop / self.lr_peak) / np.log(self.decay)))
        while self.lr_at(n) >= self.lr_stop:
            n += 1
        while n > 0 and self.lr_at(n - 1) < self.lr_stop:
            n -= 1
        return n


def momentum_step(state: MomentumState, params, grad):
    """Normalize ``grad`` to unit norm, update the velocity and take a step
    with the current scheduled learning rate."""
    params = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_grad(g)
    norm = np.linalg.norm(g)
    if norm > 0.0:
        g = g / norm
    if state.velocity is None:
        state.velocity = np.zeros_like(g)
    state.velocity = state.beta * state.velocity + g
    lr = state.lr
    state.step_count += 1
    return params - lr * state.velocity
