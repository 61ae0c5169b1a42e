"""Self-supervised forward-dynamics model and the intrinsic reward it emits.

A convolutional encoder maps observation stacks to feature vectors; a
two-layer dense predictor maps (features, one-hot action) to the predicted
next feature vector. The training signal is the squared L2 distance between
predicted and observed next features, with the observed-feature branch held
constant (no gradient flows through the target). The intrinsic reward for a
transition is log(prediction error + epsilon), so sustained novelty keeps the
reward high and familiarity drives it down toward log(epsilon).

One model instance persists across an entire task-agnostic phase: rewards
spike when the environment switches under the agent and decay as the
dynamics become predictable again.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError
from .nn import (
    Array,
    GradientStore,
    LayerSpec,
    ParameterStore,
    dense_backward,
    dense_forward,
    init_dense,
    relu_backward,
    relu_forward,
    seq_backward,
    seq_forward,
    seq_init,
    RELU_GAIN,
)
from .optim import RmspropState, clip_global_norm, rmsprop_step

N_ACTIONS = 4


@dataclass(frozen=True)
class ForwardModelSpec:
    input_shape: tuple[int, int, int]
    encoder_layers: tuple[LayerSpec, ...]
    hidden_width: int
    n_actions: int = N_ACTIONS


@dataclass(frozen=True)
class IntrinsicConfig:
    epsilon: float = 1e-8
    train_encoder: bool = True

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError("intrinsic epsilon must be > 0")


@dataclass
class ForwardModel:
    spec: ForwardModelSpec
    params: ParameterStore
    feature_dim: int


def build_forward_model(spec: ForwardModelSpec, seed: int) -> ForwardModel:
    rng = np.random.default_rng(seed)
    entries: dict[str, Array] = {}
    out_shape = seq_init(rng, spec.encoder_layers, spec.input_shape, "enc", entries)
    if len(out_shape) != 1:
        raise ConfigurationError("encoder must end with a flat feature vector")
    feature_dim = out_shape[0]
    w1, b1 = init_dense(rng, feature_dim + spec.n_actions, spec.hidden_width, RELU_GAIN)
    w2, b2 = init_dense(rng, spec.hidden_width, feature_dim, 1.0)
    entries["pred1.w"] = w1
    entries["pred1.b"] = b1
    entries["pred2.w"] = w2
    entries["pred2.b"] = b2
    return ForwardModel(spec, ParameterStore(entries, seed), feature_dim)


def encode(fm: ForwardModel, obs: Array, need_cache: bool = False):
    obs = np.asarray(obs, dtype=np.float64)
    expected = (obs.shape[0],) + tuple(fm.spec.input_shape)
    if obs.shape != expected:
        raise ContractError(f"encoder input shape {obs.shape} != expected {expected}")
    return seq_forward(fm.params, "enc", fm.spec.encoder_layers, obs, need_cache)


def one_hot_actions(actions: Array, n_actions: int) -> Array:
    onehot = np.zeros((len(actions), n_actions), dtype=np.float64)
    onehot[np.arange(len(actions)), actions] = 1.0
    return onehot


def predict_next_features(fm: ForwardModel, features: Array, actions: Array, need_cache: bool = False):
    joint = np.concatenate([features, one_hot_actions(actions, fm.spec.n_actions)], axis=1)
    h_pre, c1 = dense_forward(joint, fm.params.entries["pred1.w"], fm.params.entries["pred1.b"])
    h, mask = relu_forward(h_pre)
    pred, c2 = dense_forward(h, fm.params.entries["pred2.w"], fm.params.entries["pred2.b"])
    return pred, ((c1, mask, c2) if need_cache else None)


def forward_losses(fm: ForwardModel, obs: Array, actions: Array, next_obs: Array) -> Array:
    """Per-transition squared L2 distance between observed and predicted
    next-state features."""
    features, _ = encode(fm, obs)
    targets, _ = encode(fm, next_obs)
    pred, _ = predict_next_features(fm, features, actions)
    return ((targets - pred) ** 2).sum(axis=1)


def forward_loss(fm: ForwardModel, obs_t, action: int, obs_t1) -> float:
    """Single-transition convenience wrapper."""
    return float(
        forward_losses(fm, obs_t[None], np.asarray([action]), obs_t1[None])[0]
    )


def intrinsic_reward(loss, cfg: IntrinsicConfig):
    """log(forward loss + epsilon); strictly increasing in the loss and
    bounded below by log(epsilon)."""
    loss = np.asarray(loss, dtype=np.float64)
    if np.any(loss < 0):
        raise ContractError("forward loss must be nonnegative")
    return np.log(loss + cfg.epsilon)


def intrinsic_reward_fn(fm: ForwardModel, cfg: IntrinsicConfig):
    """Adapter with the rollout-collector reward signature."""

    def fn(obs, actions, next_obs):
        return intrinsic_reward(forward_losses(fm, obs, actions, next_obs), cfg)

    return fn


@dataclass
class CuriosityStats:
    loss_before: float
    loss_after: float
    feature_variance: float  # collapse monitor: variance of target features


def curiosity_update(
    fm: ForwardModel,
    obs: Array,
    actions: Array,
    next_obs: Array,
    opt_state: RmspropState,
    cfg: IntrinsicConfig,
    max_grad_norm: float = 0.5,
) -> tuple[RmspropState, CuriosityStats]:
    """One optimizer step on the mean forward loss over the batch."""
    if len(obs) == 0:
        raise ContractError("curiosity update needs a nonempty batch")
    batch = len(obs)
    features, enc_cache = encode(fm, obs, need_cache=True)
    targets, _ = encode(fm, next_obs)  # constant branch, no cache
    pred, (c1, mask, c2) = predict_next_features(fm, features, actions, need_cache=True)
    per_sample = ((targets - pred) ** 2).sum(axis=1)
    loss_before = float(per_sample.mean())

    d_pred = (2.0 / batch) * (pred - targets)
    dh, dw2, db2 = dense_backward(c2, fm.params.entries["pred2.w"], d_pred)
    dh = relu_backward(mask, dh)
    d_joint, dw1, db1 = dense_backward(c1, fm.params.entries["pred1.w"], dh)
    grads: dict[str, Array] = {
        "pred1.w": dw1,
        "pred1.b": db1,
        "pred2.w": dw2,
        "pred2.b": db2,
    }
    d_features = d_joint[:, : fm.feature_dim]
    if cfg.train_encoder:
        _, enc_grads = seq_backward(fm.params, "enc", fm.spec.encoder_layers, enc_cache, d_features)
        grads.update(enc_grads)
    for k, v in fm.params.entries.items():
        if k not in grads:
            grads[k] = np.zeros_like(v)
    clipped, _ = clip_global_norm(GradientStore(grads), max_grad_norm)
    new_params, new_opt = rmsprop_step(opt_state, fm.params, clipped)
    fm.params = new_params

    loss_after = float(forward_losses(fm, obs, actions, next_obs).mean())
    fvar = float(targets.var(axis=0).mean())
    return new_opt, CuriosityStats(loss_before, loss_after, fvar)
