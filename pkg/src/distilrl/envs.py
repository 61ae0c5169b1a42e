"""Agent-facing environment machinery around the synthetic task family.

The task registry hands out deterministic :class:`~distilrl.tasks.Task`
instances by name. :class:`Env` wraps one task with the agent conventions:
hidden action mapping, frame skipping, 4-frame observation stacks, sign
clipping of the raw score during training, and a hard episode-step cap.
:class:`VectorEnv` steps several independent workers in lockstep with
auto-reset, which is what rollout collection consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .tasks import TASK_CLASSES, Task

Array = np.ndarray

N_AGENT_ACTIONS = 4


@dataclass(frozen=True)
class ActionMapping:
    """Agent action {0:NOOP, 1:FIRE, 2:RIGHT, 3:LEFT} -> internal action."""

    table: tuple[int, int, int, int]

    def __post_init__(self):
        if len(self.table) != N_AGENT_ACTIONS:
            raise ConfigurationError(f"action mapping must have 4 entries: {self.table}")
        if len(set(self.table)) != N_AGENT_ACTIONS:
            raise ConfigurationError(f"action mapping must be injective: {self.table}")


def map_action(mapping: ActionMapping, agent_action: int) -> int:
    if not 0 <= agent_action < N_AGENT_ACTIONS:
        raise ContractError(f"agent action {agent_action} out of range [0,4)")
    return mapping.table[agent_action]


def clip_reward(raw: float) -> int:
    """Sign clipping used during training; evaluation keeps raw scores."""
    if not np.isfinite(raw):
        raise ContractError(f"raw reward must be finite, got {raw}")
    return int(np.sign(raw))


def registered_tasks() -> tuple[str, ...]:
    return tuple(sorted(TASK_CLASSES))


def generate_task(name: str, seed: int, size: int = 12) -> Task:
    try:
        cls = TASK_CLASSES[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown task {name!r}; registered: {registered_tasks()}"
        ) from None
    return cls(seed, size)


def task_action_mapping(name: str) -> ActionMapping:
    if name not in TASK_CLASSES:
        raise ConfigurationError(f"unknown task {name!r}")
    return ActionMapping(TASK_CLASSES[name].action_mapping)


def sample_task(task_names, rng: np.random.Generator) -> str:
    names = list(task_names)
    if not names:
        raise ConfigurationError("cannot sample from an empty task set")
    return names[int(rng.integers(0, len(names)))]


@dataclass
class StepResult:
    obs: Array  # next observation stack [stack, H, W]
    reward: int  # clipped: sign of the raw delta
    raw_delta: float
    done: bool
    episode_steps: int
    episode_return: float | None = None  # raw return, populated when done
    episode_length: int | None = None


class Env:
    """Single-worker environment: frame skip, stacking, clipping, step cap."""

    def __init__(
        self,
        task: Task,
        frame_skip: int = 4,
        stack_size: int = 4,
        max_episode_steps: int = 500,
        auto_reset: bool = False,
    ):
        self.task = task
        self.mapping = ActionMapping(task.action_mapping)
        self.frame_skip = frame_skip
        self.stack_size = stack_size
        self.max_episode_steps = max_episode_steps
        self.auto_reset = auto_reset
        self._stack: Array | None = None
        self._done = True
        self._episode_steps = 0
        self._episode_return = 0.0

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return (self.stack_size, self.task.size, self.task.size)

    def reset(self) -> Array:
        self.task.reset()
        frame = self.task.render()
        self._stack = np.repeat(frame[None], self.stack_size, axis=0)
        self._done = False
        self._episode_steps = 0
        self._episode_return = 0.0
        return self._stack.copy()

    def step(self, agent_action: int) -> StepResult:
        if self._done:
            if not self.auto_reset:
                raise ContractError("step() on a terminal episode without auto_reset")
            self.reset()
        internal = map_action(self.mapping, agent_action)
        raw = 0.0
        done = False
        for _ in range(self.frame_skip):
            delta, done = self.task.tick(internal)
            raw += delta
            if done:
                break
        self._episode_steps += 1
        self._episode_return += raw
        if self._episode_steps >= self.max_episode_steps:
            done = True
        frame = self.task.render()
        self._stack = np.concatenate([self._stack[1:], frame[None]], axis=0)
        obs = self._stack.copy()
        ep_return = ep_len = None
        if done:
            ep_return = self._episode_return
            ep_len = self._episode_steps
            self._done = True
            if self.auto_reset:
                obs = self.reset()
        return StepResult(
            obs=obs,
            reward=clip_reward(raw),
            raw_delta=raw,
            done=done,
            episode_steps=ep_len if done else self._episode_steps,
            episode_return=ep_return,
            episode_length=ep_len,
        )


@dataclass
class VectorStepResult:
    obs: Array  # [N, stack, H, W]
    rewards: Array  # [N] clipped
    raw_deltas: Array  # [N]
    dones: Array  # [N] bool
    completed: list[tuple[int, float, int]] = field(default_factory=list)
    # (worker index, raw episode return, episode length) for episodes that
    # finished on this step


class VectorEnv:
    """N independent workers over one task, stepped synchronously."""

    def __init__(
        self,
        task_name: str,
        num_workers: int,
        base_seed: int,
        size: int = 12,
        frame_skip: int = 4,
        stack_size: int = 4,
        max_episode_steps: int = 500,
        worker_seeds: list[int] | None = None,
    ):
        if num_workers < 1:
            raise ConfigurationError("need at least one worker")
        if worker_seeds is None:
            ss = np.random.SeedSequence(base_seed)
            worker_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(num_workers)]
        if len(worker_seeds) != num_workers:
            raise ConfigurationError("worker_seeds length must equal num_workers")
        self.task_name = task_name
        self.num_workers = num_workers
        self.workers = [
            Env(
                generate_task(task_name, seed, size),
                frame_skip=frame_skip,
                stack_size=stack_size,
                max_episode_steps=max_episode_steps,
                auto_reset=True,
            )
            for seed in worker_seeds
        ]

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return self.workers[0].obs_shape

    def reset(self) -> Array:
        return np.stack([w.reset() for w in self.workers])

    def step(self, actions) -> VectorStepResult:
        actions = np.asarray(actions)
        if actions.shape != (self.num_workers,):
            raise ContractError(
                f"expected {self.num_workers} actions, got shape {actions.shape}"
            )
        obs, rewards, raws, dones, completed = [], [], [], [], []
        for i, (worker, action) in enumerate(zip(self.workers, actions)):
            res = worker.step(int(action))
            obs.append(res.obs)
            rewards.append(res.reward)
            raws.append(res.raw_delta)
            dones.append(res.done)
            if res.done:
                completed.append((i, res.episode_return, res.episode_length))
        return VectorStepResult(
            obs=np.stack(obs),
            rewards=np.asarray(rewards, dtype=np.float64),
            raw_deltas=np.asarray(raws, dtype=np.float64),
            dones=np.asarray(dones, dtype=bool),
            completed=completed,
        )
