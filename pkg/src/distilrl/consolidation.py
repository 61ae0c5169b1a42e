"""Compression machinery: KL distillation of the active policy into the
knowledge base, the online-EWC quadratic penalty that protects what the
knowledge base already holds, and the running diagonal-Fisher recursion.

The penalty for compress number k uses the Fisher diagonal and anchor
parameters left behind by compress number k-1; only after distillation
finishes is the Fisher re-estimated (by acting with the freshly compressed
policy) and folded into the running sum F <- gamma_ewc * F + F_new. The
penalty is inactive until at least one compression has completed and the
global step clock has passed the configured activation threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .a2c import collect_rollout, compute_returns_advantages
from .columns import AgentAssembly, ColumnModel, active_forward, set_mode, FROZEN, TRAINABLE
from .dists import (
    CategoricalDist,
    dist_from_logits,
    grad_logits_kl_wrt_q,
    grad_logits_log_prob,
    kl_divergence,
)
from .envs import VectorEnv
from .errors import ContractError, NumericError
from .nn import Array, GradientStore, ParameterStore, add_gradients
from .optim import clip_global_norm, rmsprop_init, rmsprop_step

logger = logging.getLogger(__name__)


@dataclass
class FisherDiagonal:
    entries: dict[str, Array]

    def validate_nonnegative(self) -> None:
        for k, v in self.entries.items():
            if np.any(v < 0):
                raise ContractError(f"negative Fisher entry in {k!r}")


@dataclass
class EwcState:
    fisher: dict[str, Array] = field(default_factory=dict)
    anchor: dict[str, Array] | None = None
    lam: float = 2.0
    gamma: float = 0.3
    start_step: int = 150_000
    tasks_compressed: int = 0

    def penalty_active(self, global_step: int) -> bool:
        return self.tasks_compressed >= 1 and global_step >= self.start_step


def ewc_penalty(ewc: EwcState, params: ParameterStore, global_step: int) -> float:
    """(lam/2) * sum_i F_i (theta_i - anchor_i)^2, or 0 while inactive."""
    if not ewc.penalty_active(global_step):
        return 0.0
    if set(ewc.anchor) != set(params.entries):
        raise ContractError("EWC anchor keys do not match the parameter store")
    total = 0.0
    for k, theta in params.entries.items():
        diff = theta - ewc.anchor[k]
        total += float(np.sum(ewc.fisher[k] * diff * diff))
    return 0.5 * ewc.lam * total


def ewc_penalty_grads(ewc: EwcState, entries: dict[str, Array]) -> dict[str, Array]:
    """d(penalty)/d(theta) = lam * F * (theta - anchor)."""
    if set(ewc.anchor) != set(entries):
        raise ContractError("EWC anchor keys do not match the parameter store")
    return {k: ewc.lam * ewc.fisher[k] * (v - ewc.anchor[k]) for k, v in entries.items()}


def update_running_fisher(
    ewc: EwcState, f_new: FisherDiagonal, params: ParameterStore
) -> EwcState:
    """F <- gamma * F + F_new; the anchor snaps to the current parameters."""
    f_new.validate_nonnegative()
    if ewc.fisher and set(ewc.fisher) != set(f_new.entries):
        raise ContractError("Fisher key sets do not match")
    if not ewc.fisher:
        ewc.fisher = {k: v.copy() for k, v in f_new.entries.items()}
    else:
        ewc.fisher = {k: ewc.gamma * ewc.fisher[k] + f_new.entries[k] for k in f_new.entries}
    ewc.anchor = {k: v.copy() for k, v in params.entries.items()}
    ewc.tasks_compressed += 1
    return ewc


@dataclass
class DistillBatch:
    """States gathered by acting with the kb policy, with the (frozen) active
    column's distributions at those states as targets."""

    obs: Array
    target_dists: CategoricalDist


def distill_loss(
    batch: DistillBatch,
    kb_dists: CategoricalDist,
    ewc: EwcState,
    kb_params: ParameterStore,
    global_step: int,
) -> tuple[float, float, float]:
    """Returns (total, mean KL, penalty)."""
    if batch.obs.shape[0] == 0:
        raise ContractError("distillation batch must be nonempty")
    mean_kl = float(np.mean(kl_divergence(batch.target_dists, kb_dists)))
    penalty = ewc_penalty(ewc, kb_params, global_step)
    return mean_kl + penalty, mean_kl, penalty


# ---------------------------------------------------------------------------
# Fisher estimation
# ---------------------------------------------------------------------------


def estimate_fisher_diag(per_sample_grad_fn, samples) -> FisherDiagonal:
    """Mean of elementwise-squared per-sample gradients over all samples.

    ``per_sample_grad_fn(sample) -> dict[str, Array]`` must return the exact
    gradient for one sample; squaring happens here, before averaging.
    """
    acc: dict[str, Array] | None = None
    count = 0
    for sample in samples:
        g = per_sample_grad_fn(sample)
        if acc is None:
            acc = {k: v * v for k, v in g.items()}
        else:
            for k, v in g.items():
                acc[k] += v * v
        count += 1
    if count == 0:
        raise ContractError("Fisher estimation needs at least one sample")
    fisher = FisherDiagonal({k: v / count for k, v in acc.items()})
    fisher.validate_nonnegative()
    return fisher


def estimate_fisher_from_env(
    kb_model: ColumnModel,
    venv: VectorEnv,
    n_updates: int,
    batch_size: int,
    gamma: float,
    rng: np.random.Generator,
) -> FisherDiagonal:
    """On-policy Fisher: act with the kb policy, weight log-prob gradients by
    the kb critic's n-step advantages, square per transition, average."""
    n_workers = venv.num_workers
    roll_steps = max(1, int(np.ceil(batch_size / n_workers)))
    obs = venv.reset()
    samples: list[tuple[Array, int, float]] = []
    for _ in range(n_updates):
        buf, obs = collect_rollout(kb_model.act, venv, obs, roll_steps, rng)
        adv = compute_returns_advantages(buf, gamma)
        flat_obs = buf.flat_obs()
        flat_actions = buf.actions.reshape(-1)
        flat_adv = adv.advantages.reshape(-1)
        for i in range(min(batch_size, len(flat_obs))):
            samples.append((flat_obs[i], int(flat_actions[i]), float(flat_adv[i])))

    def grad_one(sample):
        s, a, advantage = sample
        logits, _, cache = kb_model.forward_train(s[None])
        d = dist_from_logits(logits)
        d_logits = grad_logits_log_prob(d, np.asarray([a]), np.asarray([advantage]))
        grads = kb_model.backward(cache, d_logits, None)
        return grads.entries

    return estimate_fisher_diag(grad_one, samples)


# ---------------------------------------------------------------------------
# Compress phase
# ---------------------------------------------------------------------------


@dataclass
class CompressSettings:
    total_steps: int
    n_steps: int = 20
    gamma: float = 0.99
    lr: float = 7e-4
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-5
    max_grad_norm: float = 0.5
    fisher_updates: int = 100
    fisher_batch: int = 32


@dataclass
class CompressResult:
    n_updates: int
    first_kl: float | None
    last_kl: float | None
    mean_kl: float | None
    penalty_active: bool
    env_steps: int
    fisher_stats: dict = field(default_factory=dict)


def compress_phase(
    asm: AgentAssembly,
    venv: VectorEnv,
    ewc: EwcState,
    settings: CompressSettings,
    rng: np.random.Generator,
    global_step: int = 0,
    on_update=None,
) -> CompressResult:
    """Distill the active policy into the kb, refresh the running Fisher, and
    enable the lateral connections.

    States are gathered by acting with the kb policy itself; targets are the
    active column's (lateral-aware) distributions at those states. On numeric
    failure the kb is restored from its pre-phase snapshot.
    """
    snapshot = asm.kb.params.copy()
    set_mode(asm.active, FROZEN)
    set_mode(asm.kb, TRAINABLE)
    kb_model = ColumnModel(asm.kb)
    opt = rmsprop_init(
        asm.kb.params, lr=settings.lr, alpha=settings.rmsprop_alpha, eps=settings.rmsprop_eps
    )
    per_update = settings.n_steps * venv.num_workers
    n_updates = settings.total_steps // per_update
    first_kl = last_kl = None
    kls: list[float] = []
    was_active = ewc.penalty_active(global_step)
    obs = venv.reset()
    try:
        for _ in range(n_updates):
            buf, obs = collect_rollout(kb_model.act, venv, obs, settings.n_steps, rng)
            flat = buf.flat_obs()
            target_dists, _, _ = active_forward(asm, flat)
            logits, _, cache = kb_model.forward_train(flat)
            kb_dists = dist_from_logits(logits)
            batch = DistillBatch(flat, target_dists)
            total, mean_kl, penalty = distill_loss(batch, kb_dists, ewc, asm.kb.params, global_step)
            d_logits = grad_logits_kl_wrt_q(target_dists, kb_dists) / len(flat)
            grads = kb_model.backward(cache, d_logits, None)
            if ewc.penalty_active(global_step):
                add_gradients(grads, ewc_penalty_grads(ewc, kb_model.params_view()))
            clipped, norm = clip_global_norm(grads, settings.max_grad_norm)
            new_params, opt = rmsprop_step(opt, asm.kb.params, clipped)
            asm.kb.params = new_params
            global_step += per_update
            if first_kl is None:
                first_kl = mean_kl
            last_kl = mean_kl
            kls.append(mean_kl)
            if on_update is not None:
                on_update(
                    {
                        "kl": mean_kl,
                        "penalty": penalty,
                        "loss": total,
                        "grad_norm": norm,
                        "steps": per_update,
                    }
                )
    except NumericError:
        asm.kb.params = snapshot
        set_mode(asm.kb, FROZEN)
        raise
    f_new = estimate_fisher_from_env(
        kb_model, venv, settings.fisher_updates, settings.fisher_batch, settings.gamma, rng
    )
    fisher_stats = {
        "fisher_mean": float(np.mean([float(np.mean(v)) for v in f_new.entries.values()])),
        "fisher_max": float(max(float(np.max(v)) for v in f_new.entries.values())),
    }
    update_running_fisher(ewc, f_new, asm.kb.params)
    set_mode(asm.kb, FROZEN)
    asm.lateral_enabled = True
    return CompressResult(
        n_updates=n_updates,
        first_kl=first_kl,
        last_kl=last_kl,
        mean_kl=float(np.mean(kls)) if kls else None,
        penalty_active=was_active,
        env_steps=n_updates * per_update,
        fisher_stats=fisher_stats,
    )
