"""Synchronous advantage actor-critic: rollout collection, n-step
bootstrapped returns, and the combined policy/value/entropy update.

The update operates through a small model interface (``forward_train`` /
``backward`` / ``params_view`` / ``assign``) so the same code trains a bare
column, the laterally-connected active column, or the single-network EWC
baseline (which passes penalty gradients through ``extra_grads_fn``).
Advantages are always treated as constants: no gradient flows through the
return targets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dists import (
    CategoricalDist,
    dist_from_logits,
    entropy,
    grad_logits_entropy,
    grad_logits_log_prob,
    log_prob_of,
    sample,
)
from .envs import VectorEnv
from .errors import NumericError
from .nn import Array, GradientStore, add_gradients
from .optim import RmspropState, clip_global_norm, rmsprop_step

logger = logging.getLogger(__name__)


@dataclass
class RolloutBuffer:
    """n synchronized vector steps for N workers, cleared after each update."""

    obs: Array  # [N, n, C, H, W]
    actions: Array  # [N, n] int
    rewards: Array  # [N, n] clipped extrinsic or raw intrinsic
    values: Array  # [N, n]
    log_probs: Array  # [N, n]
    dones: Array  # [N, n] bool
    final_obs: Array  # [N, C, H, W] observation after the last step
    bootstrap_values: Array  # [N] V(s_n) from the acting column
    completed: list[tuple[int, float, int]] = field(default_factory=list)
    intrinsic_mean: float | None = None

    @property
    def num_workers(self) -> int:
        return self.obs.shape[0]

    @property
    def num_steps(self) -> int:
        return self.obs.shape[1]

    def flat_obs(self) -> Array:
        n, t = self.obs.shape[:2]
        return self.obs.reshape(n * t, *self.obs.shape[2:])


@dataclass
class AdvantageEstimate:
    returns: Array  # [N, n]
    advantages: Array  # [N, n]


@dataclass
class LossTerms:
    policy_loss: float
    value_loss: float
    entropy: float
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    extra: float = 0.0  # e.g. EWC penalty for the single-column baseline

    @property
    def total(self) -> float:
        return (
            self.policy_loss
            + self.value_coef * self.value_loss
            - self.entropy_coef * self.entropy
            + self.extra
        )


@dataclass
class UpdateStats:
    loss: LossTerms
    grad_norm: float  # pre-clip global norm
    updated: bool


def collect_rollout(
    act_fn,
    venv: VectorEnv,
    current_obs: Array,
    n_steps: int,
    rng: np.random.Generator,
    intrinsic_fn=None,
) -> tuple[RolloutBuffer, Array]:
    """Advance the vector env ``n_steps`` with actions sampled from ``act_fn``.

    ``act_fn(obs) -> (CategoricalDist, values)`` is the acting column.
    With ``intrinsic_fn(obs, actions, next_obs) -> rewards`` the recorded
    rewards come from the curiosity model instead of the (clipped) scores.
    Returns the filled buffer and the observation to resume from.
    """
    n_workers = venv.num_workers
    obs_list, act_list, rew_list, val_list, lp_list, done_list = [], [], [], [], [], []
    completed: list[tuple[int, float, int]] = []
    intr_values = []
    obs = current_obs
    for _ in range(n_steps):
        dist, values = act_fn(obs)
        actions = sample(dist, rng)
        res = venv.step(actions)
        if intrinsic_fn is not None:
            rewards = intrinsic_fn(obs, actions, res.obs)
            intr_values.append(rewards)
        else:
            rewards = res.rewards
        obs_list.append(obs)
        act_list.append(actions)
        rew_list.append(rewards)
        val_list.append(values)
        lp_list.append(log_prob_of(dist, actions))
        done_list.append(res.dones)
        completed.extend(res.completed)
        obs = res.obs
    _, bootstrap_values = act_fn(obs)
    buf = RolloutBuffer(
        obs=np.stack(obs_list, axis=1),
        actions=np.stack(act_list, axis=1),
        rewards=np.stack(rew_list, axis=1).astype(np.float64),
        values=np.stack(val_list, axis=1),
        log_probs=np.stack(lp_list, axis=1),
        dones=np.stack(done_list, axis=1),
        final_obs=obs.copy(),
        bootstrap_values=bootstrap_values,
        completed=completed,
        intrinsic_mean=float(np.mean(intr_values)) if intr_values else None,
    )
    assert buf.obs.shape[:2] == (n_workers, n_steps)
    return buf, obs


def compute_returns_advantages(buf: RolloutBuffer, gamma: float) -> AdvantageEstimate:
    """Backward recursion R_t = r_t + gamma * R_{t+1} * (1 - done_t), seeded
    with the bootstrap value; A_t = R_t - V(s_t)."""
    n, t = buf.rewards.shape
    returns = np.zeros((n, t), dtype=np.float64)
    running = buf.bootstrap_values.astype(np.float64).copy()
    for step in range(t - 1, -1, -1):
        running = buf.rewards[:, step] + gamma * running * (~buf.dones[:, step])
        returns[:, step] = running
    return AdvantageEstimate(returns, returns - buf.values)


def a2c_loss(
    dists: CategoricalDist,
    values: Array,
    actions: Array,
    adv: AdvantageEstimate,
    value_coef: float = 0.5,
    entropy_coef: float = 0.01,
) -> LossTerms:
    """Loss terms over flattened rollout entries (advantages held constant)."""
    lp = log_prob_of(dists, actions)
    advantages = adv.advantages.reshape(-1)
    returns = adv.returns.reshape(-1)
    policy_loss = float(-np.mean(lp * advantages))
    value_loss = float(np.mean((returns - values.reshape(-1)) ** 2))
    ent = float(np.mean(entropy(dists)))
    if not np.isfinite(policy_loss) or not np.isfinite(value_loss):
        raise NumericError("non-finite A2C loss")
    return LossTerms(policy_loss, value_loss, ent, value_coef, entropy_coef)


def a2c_update(
    model,
    buf: RolloutBuffer,
    opt_state: RmspropState,
    gamma: float = 0.99,
    value_coef: float = 0.5,
    entropy_coef: float = 0.01,
    max_grad_norm: float = 0.5,
    normalize_advantages: bool = False,
    extra_grads_fn=None,
) -> tuple[RmspropState, UpdateStats | None]:
    """One gradient step on the combined loss; clears nothing itself, the
    caller drops the buffer afterwards. Frozen models make this a no-op."""
    if not model.trainable:
        logger.warning("a2c_update called on a frozen column; skipping")
        return opt_state, None
    adv = compute_returns_advantages(buf, gamma)
    advantages = adv.advantages.reshape(-1)
    if normalize_advantages:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    batch = advantages.shape[0]
    actions = buf.actions.reshape(-1)
    returns = adv.returns.reshape(-1)

    logits, values, cache = model.forward_train(buf.flat_obs())
    dists = dist_from_logits(logits)
    loss = a2c_loss(
        dists, values, actions, AdvantageEstimate(
            returns.reshape(buf.rewards.shape), advantages.reshape(buf.rewards.shape)
        ),
        value_coef, entropy_coef,
    )

    d_logits = grad_logits_log_prob(dists, actions, -advantages / batch)
    d_logits += -entropy_coef / batch * grad_logits_entropy(dists)
    d_value = (value_coef * 2.0 / batch) * (values.reshape(-1) - returns)
    grads = model.backward(cache, d_logits, d_value[:, None])
    if extra_grads_fn is not None:
        extra_loss, extra_grads = extra_grads_fn(model.params_view())
        loss.extra = extra_loss
        add_gradients(grads, extra_grads)
    clipped, norm = clip_global_norm(grads, max_grad_norm)
    new_opt, new_entries = _apply(model, opt_state, clipped)
    model.assign(new_entries)
    return new_opt, UpdateStats(loss, norm, True)


def _apply(model, opt_state: RmspropState, grads: GradientStore):
    from .nn import ParameterStore  # local import to avoid cycle confusion

    params = ParameterStore(model.params_view(), seed=0)
    new_params, new_opt = rmsprop_step(opt_state, params, grads)
    return new_opt, new_params.entries
