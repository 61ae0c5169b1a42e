"""Categorical action distributions over logits, with the gradient formulas
used by the training losses.

All log computations floor probabilities at ``PROB_FLOOR`` so that distilling
toward near-one-hot targets stays finite; the analytic gradients carry the
matching indicator terms so finite-difference checks agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

Array = np.ndarray

PROB_FLOOR = 1e-10


@dataclass(frozen=True)
class CategoricalDist:
    probs: Array  # (..., A)
    log_probs: Array  # (..., A), log of floored probs


def dist_from_logits(logits: Array) -> CategoricalDist:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=-1, keepdims=True)
    return CategoricalDist(probs, np.log(np.maximum(probs, PROB_FLOOR)))


def entropy(d: CategoricalDist) -> Array:
    """Shannon entropy in nats; 0*log(0) contributes zero."""
    return -(d.probs * d.log_probs).sum(axis=-1)


def kl_divergence(p: CategoricalDist, q: CategoricalDist) -> Array:
    """KL(p || q) with floored logs; clamped at 0 so flooring noise never
    produces a negative divergence."""
    kl = (p.probs * (p.log_probs - q.log_probs)).sum(axis=-1)
    return np.maximum(kl, 0.0)


def log_prob_of(d: CategoricalDist, actions: Array) -> Array:
    return np.take_along_axis(d.log_probs, actions[..., None], axis=-1)[..., 0]


def sample(d: CategoricalDist, rng: np.random.Generator) -> Array:
    """Inverse-CDF draw per row; deterministic given the generator state."""
    cum = np.cumsum(d.probs, axis=-1)
    u = rng.random(d.probs.shape[:-1])
    idx = (u[..., None] > cum).sum(axis=-1)
    return np.minimum(idx, d.probs.shape[-1] - 1)


# ---------------------------------------------------------------------------
# Gradients with respect to logits
# ---------------------------------------------------------------------------


def _floor_mask(probs: Array) -> Array:
    return (probs > PROB_FLOOR).astype(np.float64)


def grad_logits_log_prob(d: CategoricalDist, actions: Array, coeff: Array) -> Array:
    """d/dlogits of sum_i coeff_i * log pi(a_i); coeff is per-row."""
    p = d.probs
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
    c_a = np.take_along_axis(_floor_mask(p), actions[..., None], axis=-1)
    w = (coeff[..., None] * c_a)
    return w * (onehot - p)


def grad_logits_entropy(d: CategoricalDist) -> Array:
    """d/dlogits of the per-row entropy."""
    p, lp = d.probs, d.log_probs
    t = lp + _floor_mask(p)
    inner = (p * t).sum(axis=-1, keepdims=True)
    return -p * t + p * inner


def grad_logits_kl_wrt_q(p: CategoricalDist, q: CategoricalDist) -> Array:
    """d/dlogits_q of KL(p || q) per row, for fixed target p."""
    cm = _floor_mask(q.probs)
    pc = p.probs * cm
    return q.probs * pc.sum(axis=-1, keepdims=True) - pc
