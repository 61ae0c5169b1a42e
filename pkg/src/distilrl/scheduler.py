"""Phase orchestration: the task-agnostic pretraining loop, progress and
compress phases over the task sequence, and the full multi-visit experiment.

The experiment is a statically derivable plan of phases. Every phase draws
its seeds from (master seed, structural key), so the plan and all phase-level
randomness are reproducible, resumable at phase boundaries, and independent
of whether earlier phases ran: a no-pretraining baseline run is an exact
suffix of the corresponding full run (same seeds, same phase records).

Algorithms:
  tapd                -- task-agnostic pretraining (3 variations), then
                         visits x tasks x (progress, compress, fisher)
  pnc_baseline        -- the same loop without the task-agnostic prefix
  online_ewc_baseline -- one network trained with A2C + the EWC penalty
                         directly, Fisher refreshed per task; no distillation,
                         no laterals, never reinitialized

The global step clock counts explore/progress/compress env interactions.
Fisher estimation samples off-clock; its record is zero-length. Progress
cycles emit [progress, compress, fisher] records, task-agnostic samples emit
[agnostic_explore, agnostic_compress] with the Fisher refresh folded in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .a2c import UpdateStats, a2c_update, collect_rollout
from .columns import (
    ActiveModel,
    AgentAssembly,
    FROZEN,
    TRAINABLE,
    make_assembly,
    reinit_active,
    set_mode,
)
from .config import ExperimentConfig, column_spec, forward_model_spec
from .consolidation import (
    CompressSettings,
    EwcState,
    compress_phase,
    estimate_fisher_from_env,
    ewc_penalty,
    ewc_penalty_grads,
    update_running_fisher,
)
from .curiosity import (
    IntrinsicConfig,
    build_forward_model,
    curiosity_update,
    intrinsic_reward_fn,
)
from .envs import Env, VectorEnv, clip_reward, generate_task, sample_task
from .errors import DistilRLError
from .manifest import MetricsWriter, PhaseRecord, RunManifest
from .nn import ParameterStore
from .optim import rmsprop_init
from .seeds import derive_rng, derive_seed

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
METRICS_NAME = "metrics.jsonl"
CHECKPOINT_NAME = "checkpoint_latest.npz"
CHECKPOINT_STATE_NAME = "checkpoint_state.json"


@dataclass(frozen=True)
class PlannedPhase:
    kind: str  # agnostic_explore | agnostic_compress | progress | compress | fisher
    task: str | None
    visit: int | None
    sample: int | None
    steps: int
    seed: int


def build_plan(cfg: ExperimentConfig) -> list[PlannedPhase]:
    """The full phase schedule, computable without running anything."""
    plan: list[PlannedPhase] = []
    if cfg.algorithm == "tapd":
        n_samples = 1 if cfg.variation == 3 else cfg.num_samples_agnostic
        for s in range(n_samples):
            task = sample_task(cfg.agnostic_tasks, derive_rng(cfg.master_seed, "agnostic_draw", s))
            plan.append(
                PlannedPhase(
                    "agnostic_explore", task, None, s,
                    cfg.num_env_steps_agnostic,
                    derive_seed(cfg.master_seed, "agnostic_explore", s),
                )
            )
            plan.append(
                PlannedPhase(
                    "agnostic_compress", task, None, s,
                    cfg.num_env_steps_agnostic_compress,
                    derive_seed(cfg.master_seed, "agnostic_compress", s),
                )
            )
    if cfg.algorithm in ("tapd", "pnc_baseline"):
        for visit in range(1, cfg.num_visits + 1):
            for t_idx, task in enumerate(cfg.tasks):
                plan.append(
                    PlannedPhase(
                        "progress", task, visit, None,
                        cfg.num_env_steps_progress,
                        derive_seed(cfg.master_seed, "progress", visit, t_idx),
                    )
                )
                plan.append(
                    PlannedPhase(
                        "compress", task, visit, None,
                        cfg.num_env_steps_compress,
                        derive_seed(cfg.master_seed, "compress", visit, t_idx),
                    )
                )
                plan.append(
                    PlannedPhase(
                        "fisher", task, visit, None, 0,
                        derive_seed(cfg.master_seed, "fisher", visit, t_idx),
                    )
                )
    else:  # online_ewc_baseline
        for visit in range(1, cfg.num_visits + 1):
            for t_idx, task in enumerate(cfg.tasks):
                plan.append(
                    PlannedPhase(
                        "progress", task, visit, None,
                        cfg.num_env_steps_progress,
                        derive_seed(cfg.master_seed, "progress", visit, t_idx),
                    )
                )
                plan.append(
                    PlannedPhase(
                        "fisher", task, visit, None, 0,
                        derive_seed(cfg.master_seed, "fisher", visit, t_idx),
                    )
                )
    return plan


def configured_step_total(cfg: ExperimentConfig) -> int:
    return sum(p.steps for p in build_plan(cfg))


class ExperimentRunner:
    def __init__(self, cfg: ExperimentConfig, out_dir: str | Path):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.spec = column_spec(cfg)
        self.asm: AgentAssembly = make_assembly(self.spec, derive_seed(cfg.master_seed, "assembly"))
        self.fm = build_forward_model(forward_model_spec(cfg), derive_seed(cfg.master_seed, "forward_model"))
        self.fm_opt = rmsprop_init(self.fm.params, cfg.lr, cfg.rmsprop_alpha, cfg.rmsprop_eps)
        self.icfg = IntrinsicConfig(cfg.intrinsic_epsilon, cfg.train_encoder)
        self.ewc = EwcState(lam=cfg.ewc_lambda, gamma=cfg.ewc_gamma, start_step=cfg.ewc_start)
        self.global_step = 0
        self.phase_index = 0
        self.plan = build_plan(cfg)
        self.metrics = MetricsWriter(self.out_dir / METRICS_NAME)
        self.manifest = RunManifest(
            algorithm=cfg.algorithm,
            variation=cfg.variation,
            master_seed=cfg.master_seed,
            profile=cfg.profile,
            config=cfg.resolved(),
            config_hash=cfg.config_hash(),
            out_dir=str(self.out_dir),
            metrics_path=str(self.out_dir / METRICS_NAME),
            checkpoint_path=str(self.out_dir / CHECKPOINT_NAME),
        )

    # -- environment / bookkeeping helpers

    def _venv(self, task: str, phase_seed: int) -> VectorEnv:
        return VectorEnv(
            task,
            self.cfg.num_processes,
            base_seed=derive_seed(phase_seed, "env"),
            size=self.cfg.obs_size,
            frame_skip=self.cfg.frame_skip,
            stack_size=self.cfg.frame_stack,
            max_episode_steps=self.cfg.max_episode_steps,
        )

    def _record(self, phase: PlannedPhase, start: int, metrics: dict) -> None:
        self.manifest.records.append(
            PhaseRecord(
                kind=phase.kind,
                task=phase.task,
                visit=phase.visit,
                sample=phase.sample,
                seed=phase.seed,
                start_step=start,
                end_step=self.global_step,
                metrics=metrics,
            )
        )
        self.phase_index += 1

    def _metric(self, phase: PlannedPhase, record: dict) -> None:
        base = {
            "phase_index": self.phase_index,
            "phase": phase.kind,
            "task": phase.task,
            "visit": phase.visit,
            "sample": phase.sample,
            "step": self.global_step,
        }
        base.update(record)
        self.metrics.append(base)

    # -- phase executors

    def _explore_phase(self, phase: PlannedPhase, intrinsic: bool) -> None:
        cfg = self.cfg
        start = self.global_step
        online_ewc = cfg.algorithm == "online_ewc_baseline"
        if not online_ewc:
            reinit_active(self.asm, derive_seed(phase.seed, "reinit"))
        set_mode(self.asm.active, TRAINABLE)
        set_mode(self.asm.kb, FROZEN)
        model = ActiveModel(self.asm)
        opt = rmsprop_init(
            ParameterStore(model.params_view(), 0), cfg.lr, cfg.rmsprop_alpha, cfg.rmsprop_eps
        )
        rng = derive_rng(phase.seed, "actions")
        per_update = cfg.num_steps * cfg.num_processes
        n_updates = phase.steps // per_update
        reward_fn = None
        if intrinsic:
            raw_fn = intrinsic_reward_fn(self.fm, self.icfg)
            if cfg.clip_intrinsic:
                reward_fn = lambda o, a, n: np.sign(raw_fn(o, a, n))
            else:
                reward_fn = raw_fn
        extra = self._ewc_extra_grads() if online_ewc else None
        scores: list[float] = []
        entropies: list[float] = []
        next_eval = cfg.eval_steps
        if n_updates > 0:
            venv = self._venv(phase.task, phase.seed)
            obs = venv.reset()
            for _ in range(n_updates):
                buf, obs = collect_rollout(model.act, venv, obs, cfg.num_steps, rng, reward_fn)
                fm_stats = None
                if intrinsic:
                    next_stack = np.concatenate(
                        [buf.obs[:, 1:], buf.final_obs[:, None]], axis=1
                    )
                    flat = buf.flat_obs()
                    self.fm_opt, fm_stats = curiosity_update(
                        self.fm,
                        flat,
                        buf.actions.reshape(-1),
                        next_stack.reshape(flat.shape),
                        self.fm_opt,
                        self.icfg,
                        cfg.max_grad_norm,
                    )
                opt, stats = a2c_update(
                    model,
                    buf,
                    opt,
                    gamma=cfg.gamma,
                    value_coef=cfg.value_loss_coef,
                    entropy_coef=cfg.entropy_coef,
                    max_grad_norm=cfg.max_grad_norm,
                    normalize_advantages=cfg.advantage_normalization,
                    extra_grads_fn=extra,
                )
                self.global_step += per_update
                rec = {
                    "kind": "update",
                    "policy_loss": stats.loss.policy_loss,
                    "value_loss": stats.loss.value_loss,
                    "entropy": stats.loss.entropy,
                    "grad_norm": stats.grad_norm,
                }
                if stats.loss.extra:
                    rec["ewc_penalty"] = stats.loss.extra
                if buf.intrinsic_mean is not None:
                    rec["intrinsic_mean"] = buf.intrinsic_mean
                if fm_stats is not None:
                    rec["forward_loss"] = fm_stats.loss_before
                    rec["feature_variance"] = fm_stats.feature_variance
                self._metric(phase, rec)
                entropies.append(stats.loss.entropy)
                for _, ep_return, ep_len in buf.completed:
                    scores.append(ep_return)
                    self._metric(
                        phase,
                        {"kind": "episode", "score": ep_return, "length": ep_len},
                    )
                if self.global_step - start >= next_eval:
                    window = scores[-100:]
                    self._metric(
                        phase,
                        {
                            "kind": "eval",
                            "rolling_score": float(np.mean(window)) if window else None,
                            "episodes": len(scores),
                        },
                    )
                    next_eval += cfg.eval_steps
        summary = {
            "updates": n_updates,
            "episodes": len(scores),
            "mean_entropy": float(np.mean(entropies)) if entropies else None,
            "final_window_score": float(np.mean(scores[-100:])) if scores else None,
            "mean_score": float(np.mean(scores)) if scores else None,
        }
        self._record(phase, start, summary)

    def _ewc_extra_grads(self):
        def extra(entries):
            if not self.ewc.penalty_active(self.global_step):
                return 0.0, {}
            params = ParameterStore(entries, 0)
            return (
                ewc_penalty(self.ewc, params, self.global_step),
                ewc_penalty_grads(self.ewc, entries),
            )

        return extra

    def _compress_phases(self, phase: PlannedPhase, paired_fisher: PlannedPhase | None) -> None:
        cfg = self.cfg
        start = self.global_step
        venv = self._venv(phase.task, phase.seed)
        settings = CompressSettings(
            total_steps=phase.steps,
            n_steps=cfg.num_steps,
            gamma=cfg.gamma,
            lr=cfg.lr,
            rmsprop_alpha=cfg.rmsprop_alpha,
            rmsprop_eps=cfg.rmsprop_eps,
            max_grad_norm=cfg.max_grad_norm,
            fisher_updates=cfg.num_steps_fisher,
            fisher_batch=cfg.batch_size_fisher,
        )

        def on_update(info):
            self.global_step += info["steps"]
            self._metric(
                phase,
                {
                    "kind": "update",
                    "kl": info["kl"],
                    "ewc_penalty": info["penalty"],
                    "loss": info["loss"],
                    "grad_norm": info["grad_norm"],
                },
            )

        res = compress_phase(
            self.asm,
            venv,
            self.ewc,
            settings,
            derive_rng(phase.seed, "actions"),
            global_step=start,
            on_update=on_update,
        )
        compress_metrics = {
            "updates": res.n_updates,
            "first_kl": res.first_kl,
            "last_kl": res.last_kl,
            "mean_kl": res.mean_kl,
            "penalty_active": res.penalty_active,
        }
        if paired_fisher is None:
            compress_metrics.update(res.fisher_stats)
            self._record(phase, start, compress_metrics)
        else:
            self._record(phase, start, compress_metrics)
            fisher_start = self.global_step
            self._record(paired_fisher, fisher_start, dict(res.fisher_stats))

    def _fisher_phase(self, phase: PlannedPhase) -> None:
        cfg = self.cfg
        venv = self._venv(phase.task, phase.seed)
        model = ActiveModel(self.asm)
        f_new = estimate_fisher_from_env(
            model,
            venv,
            cfg.num_steps_fisher,
            cfg.batch_size_fisher,
            cfg.gamma,
            derive_rng(phase.seed, "actions"),
        )
        update_running_fisher(self.ewc, f_new, ParameterStore(model.params_view(), 0))
        stats = {
            "fisher_mean": float(np.mean([float(np.mean(v)) for v in f_new.entries.values()])),
            "tasks_compressed": self.ewc.tasks_compressed,
        }
        self._record(phase, self.global_step, stats)

    # -- main loop

    def run(self) -> RunManifest:
        cfg = self.cfg
        manifest_path = self.out_dir / MANIFEST_NAME
        self.manifest.save(manifest_path)
        try:
            while self.phase_index < len(self.plan):
                if (
                    cfg.stop_after_phases is not None
                    and self.phase_index >= cfg.stop_after_phases
                ):
                    self.manifest.status = "stopped"
                    break
                phase = self.plan[self.phase_index]
                if phase.kind in ("agnostic_explore",):
                    self._explore_phase(phase, intrinsic=True)
                elif phase.kind == "progress":
                    self._explore_phase(phase, intrinsic=False)
                elif phase.kind == "agnostic_compress":
                    self._compress_phases(phase, paired_fisher=None)
                elif phase.kind == "compress":
                    paired = self.plan[self.phase_index + 1]
                    assert paired.kind == "fisher"
                    self._compress_phases(phase, paired_fisher=paired)
                elif phase.kind == "fisher":
                    self._fisher_phase(phase)
                else:  # pragma: no cover
                    raise DistilRLError(f"unknown phase kind {phase.kind!r}")
                self._checkpoint()
                self.manifest.save(manifest_path)
            else:
                self.manifest.status = "completed"
        except DistilRLError:
            self.manifest.status = "failed"
            self.manifest.save(manifest_path)
            raise
        self.manifest.final_checksums = {
            "active": self.asm.active.params.checksum(),
            "kb": self.asm.kb.params.checksum(),
            "adaptors": self.asm.adaptors.checksum(),
            "forward_model": self.fm.params.checksum(),
        }
        self.manifest.save(manifest_path)
        return self.manifest

    # -- checkpointing

    def _checkpoint(self) -> None:
        import json

        arrays: dict[str, np.ndarray] = {}
        for prefix, entries in (
            ("active", self.asm.active.params.entries),
            ("kb", self.asm.kb.params.entries),
            ("adaptors", self.asm.adaptors.entries),
            ("fm", self.fm.params.entries),
            ("fmopt", self.fm_opt.squared_avg),
            ("ewc_fisher", self.ewc.fisher),
            ("ewc_anchor", self.ewc.anchor or {}),
        ):
            for k, v in entries.items():
                arrays[f"{prefix}/{k}"] = v
        np.savez(self.out_dir / CHECKPOINT_NAME, **arrays)
        state = {
            "global_step": self.global_step,
            "phase_index": self.phase_index,
            "lateral_enabled": self.asm.lateral_enabled,
            "tasks_compressed": self.ewc.tasks_compressed,
            "has_anchor": self.ewc.anchor is not None,
            "config_hash": self.cfg.config_hash(),
            "spec_hash": self.spec.spec_hash(),
            "phase": self.plan[self.phase_index - 1].kind if self.phase_index else None,
            "step_count": self.global_step,
        }
        (self.out_dir / CHECKPOINT_STATE_NAME).write_text(json.dumps(state, indent=2, sort_keys=True))

    def restore(self) -> None:
        import json

        state = json.loads((self.out_dir / CHECKPOINT_STATE_NAME).read_text())
        if state["config_hash"] != self.cfg.config_hash():
            raise DistilRLError("checkpoint was produced by a different config")
        data = np.load(self.out_dir / CHECKPOINT_NAME)
        buckets: dict[str, dict[str, np.ndarray]] = {}
        for key in data.files:
            prefix, name = key.split("/", 1)
            buckets.setdefault(prefix, {})[name] = data[key]
        self.asm.active.params.entries = buckets.get("active", {})
        self.asm.kb.params.entries = buckets.get("kb", {})
        self.asm.adaptors.entries = buckets.get("adaptors", {})
        self.fm.params.entries = buckets.get("fm", {})
        self.fm_opt.squared_avg = buckets.get("fmopt", {})
        self.ewc.fisher = buckets.get("ewc_fisher", {})
        self.ewc.anchor = buckets.get("ewc_anchor", {}) if state["has_anchor"] else None
        self.ewc.tasks_compressed = state["tasks_compressed"]
        self.asm.lateral_enabled = state["lateral_enabled"]
        self.global_step = state["global_step"]
        self.phase_index = state["phase_index"]
        self.manifest = RunManifest.load(self.out_dir / MANIFEST_NAME)
        self.manifest.status = "running"
        self.manifest.records = self.manifest.records[: self.phase_index]
        self.metrics.truncate_to_phase(self.phase_index)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> RunManifest:
    return ExperimentRunner(cfg, out_dir).run()


def resume_experiment(
    manifest_path: str | Path, stop_after_phases: int | None = None
) -> RunManifest:
    """Continue a stopped/interrupted run from its last completed phase.
    By default the resumed run proceeds to completion."""
    from dataclasses import replace

    from .config import config_from_resolved

    manifest = RunManifest.load(manifest_path)
    cfg = replace(
        config_from_resolved(manifest.config), stop_after_phases=stop_after_phases
    )
    runner = ExperimentRunner(cfg, Path(manifest_path).parent)
    runner.restore()
    return runner.run()


def evaluate_policy(
    act_fn,
    task_name: str,
    n_episodes: int,
    seed: int,
    obs_size: int = 12,
    frame_skip: int = 4,
    stack_size: int = 4,
    max_episode_steps: int = 500,
) -> list[float]:
    """Raw episode returns of a policy on one task (stochastic action draws)."""
    env = Env(
        generate_task(task_name, derive_seed(seed, "eval_env"), obs_size),
        frame_skip=frame_skip,
        stack_size=stack_size,
        max_episode_steps=max_episode_steps,
        auto_reset=True,
    )
    from .dists import sample as dist_sample

    rng = derive_rng(seed, "eval_actions")
    obs = env.reset()
    returns: list[float] = []
    while len(returns) < n_episodes:
        dist, _ = act_fn(obs[None])
        action = int(dist_sample(dist, rng)[0])
        res = env.step(action)
        obs = res.obs
        if res.done:
            returns.append(res.episode_return)
    return returns
