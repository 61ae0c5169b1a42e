"""RMSprop (non-centered) and global gradient-norm clipping.

Both operations are pure functions of their inputs: callers assign the
returned stores, so a raised :class:`NumericError` leaves parameters intact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError
from .nn import Array, GradientStore, ParameterStore


@dataclass
class RmspropState:
    squared_avg: dict[str, Array]
    lr: float = 7e-4
    alpha: float = 0.99
    eps: float = 1e-5

    def copy(self) -> "RmspropState":
        return RmspropState(
            {k: v.copy() for k, v in self.squared_avg.items()}, self.lr, self.alpha, self.eps
        )


def rmsprop_init(params: ParameterStore, lr: float = 7e-4, alpha: float = 0.99, eps: float = 1e-5) -> RmspropState:
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"rmsprop alpha must be in (0,1), got {alpha}")
    return RmspropState({k: np.zeros_like(v) for k, v in params.entries.items()}, lr, alpha, eps)


def global_norm(grads: GradientStore) -> float:
    total = 0.0
    for g in grads.entries.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_global_norm(grads: GradientStore, max_norm: float) -> tuple[GradientStore, float]:
    """Scale all gradients uniformly so the global L2 norm is at most
    ``max_norm``; returns (clipped gradients, pre-clip norm)."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return GradientStore({k: g * scale for k, g in grads.entries.items()}), norm


def rmsprop_step(
    state: RmspropState, params: ParameterStore, grads: GradientStore
) -> tuple[ParameterStore, RmspropState]:
    """squared_avg <- alpha*squared_avg + (1-alpha)*g^2;
    theta <- theta - lr * g / (sqrt(squared_avg) + eps)."""
    grads.validate_against(params)
    if set(state.squared_avg) != set(params.entries):
        raise ContractError("optimizer state does not match parameter store")
    new_sq: dict[str, Array] = {}
    new_params: dict[str, Array] = {}
    for k, theta in params.entries.items():
        g = grads.entries[k]
        sq = state.alpha * state.squared_avg[k] + (1.0 - state.alpha) * g * g
        upd = theta - state.lr * g / (np.sqrt(sq) + state.eps)
        if not np.all(np.isfinite(upd)):
            raise NumericError(f"rmsprop produced non-finite values for {k!r}")
        new_sq[k] = sq
        new_params[k] = upd
    return (
        ParameterStore(new_params, params.seed),
        RmspropState(new_sq, state.lr, state.alpha, state.eps),
    )
