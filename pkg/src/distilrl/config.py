"""Experiment configuration: dataclass defaults, the toy desk-scale profile,
and the flat key=value config-file dialect.

Field defaults are the paper-scale profile (hyperparameter table values);
``--profile toy`` swaps in the desk-scale budgets and the small architecture.
Config files are flat ``key=value`` lines using the canonical hyperparameter
names (``ewc-lambda=2``, ``num-steps=20``) plus artifact keys (``algorithm``,
``variation``, ``profile``, ``tasks``, ...). Explicit file keys override the
profile; CLI flags override the file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .curiosity import ForwardModelSpec
from .envs import registered_tasks
from .errors import ConfigurationError
from .nn import Activation, Conv, Dense, Flatten, NetworkSpec

ALGORITHMS = ("tapd", "pnc_baseline", "online_ewc_baseline")

# progress-phase task sequence and the task-agnostic subset, by analogy with
# the five-game suite and its two-game exploration set
DEFAULT_TASKS = ("volley", "swarm", "chase", "dodge", "raid")
DEFAULT_AGNOSTIC_TASKS = ("swarm", "chase")


@dataclass
class ExperimentConfig:
    algorithm: str = "tapd"
    variation: int = 1
    profile: str = "paper"
    master_seed: int = 0
    # tasks
    tasks: tuple[str, ...] = DEFAULT_TASKS
    agnostic_tasks: tuple[str, ...] = DEFAULT_AGNOSTIC_TASKS
    # environment
    obs_size: int = 84
    frame_skip: int = 4
    frame_stack: int = 4
    max_episode_steps: int = 500
    num_processes: int = 10
    # budgets (environment steps summed over workers)
    num_env_steps_progress: int = 2_500_000
    num_env_steps_compress: int = 300_000
    num_env_steps_agnostic: int = 300_000
    num_env_steps_agnostic_compress: int = 300_000
    num_samples_agnostic: int = 25
    num_visits: int = 3
    num_steps: int = 20
    num_steps_fisher: int = 100
    batch_size_fisher: int = 32
    eval_steps: int = 100_000
    # optimizer / a2c
    lr: float = 7e-4
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-5
    gamma: float = 0.99
    value_loss_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    advantage_normalization: bool = False
    # online EWC
    ewc_lambda: float = 2.0
    ewc_gamma: float = 0.3
    ewc_start: int = 150_000
    # curiosity
    intrinsic_epsilon: float = 1e-8
    train_encoder: bool = True
    clip_intrinsic: bool = False
    # artifact plumbing
    stop_after_phases: int | None = None

    def resolved(self) -> dict:
        d = asdict(self)
        d["tasks"] = list(self.tasks)
        d["agnostic_tasks"] = list(self.agnostic_tasks)
        return d

    def config_hash(self) -> str:
        # stop-after-phases only gates how far a run proceeds, never the
        # dynamics, so stopping and resuming keeps the same hash
        d = self.resolved()
        d.pop("stop_after_phases", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


TOY_OVERRIDES = dict(
    profile="toy",
    obs_size=12,
    num_env_steps_progress=50_000,
    num_env_steps_compress=10_000,
    num_env_steps_agnostic=10_000,
    num_env_steps_agnostic_compress=10_000,
    num_samples_agnostic=6,
    num_visits=3,
    ewc_start=3_000,
    eval_steps=2_000,
)


# canonical hyperparameter-table key -> dataclass field
TABLE_KEYS = {
    "batch-size-fisher": "batch_size_fisher",
    "eval-steps": "eval_steps",
    "ewc-lambda": "ewc_lambda",
    "ewc-gamma": "ewc_gamma",
    "gamma": "gamma",
    "ewc-start": "ewc_start",
    "entropy-coef": "entropy_coef",
    "lr": "lr",
    "eps": "rmsprop_eps",
    "alpha": "rmsprop_alpha",
    "num-env-steps-agnostic": "num_env_steps_agnostic",
    "num-env-steps-compress": "num_env_steps_compress",
    "num-env-steps-agnostic-compress": "num_env_steps_agnostic_compress",
    "num-env-steps-progress": "num_env_steps_progress",
    "num-processes": "num_processes",
    "num-visits": "num_visits",
    "value-loss-coef": "value_loss_coef",
    "max-grad-norm": "max_grad_norm",
    "num-steps-fisher": "num_steps_fisher",
    "num-steps": "num_steps",
    "num-samples-drawn-in-task-agnostic-phase": "num_samples_agnostic",
}

ARTIFACT_KEYS = {
    "algorithm": "algorithm",
    "variation": "variation",
    "profile": "profile",
    "seed": "master_seed",
    "tasks": "tasks",
    "agnostic-tasks": "agnostic_tasks",
    "obs-size": "obs_size",
    "frame-skip": "frame_skip",
    "max-episode-steps": "max_episode_steps",
    "intrinsic-epsilon": "intrinsic_epsilon",
    "train-encoder": "train_encoder",
    "clip-intrinsic": "clip_intrinsic",
    "advantage-normalization": "advantage_normalization",
    "stop-after-phases": "stop_after_phases",
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def _coerce(field_name: str, value: str):
    ftype = _FIELD_TYPES[field_name]
    if field_name in ("tasks", "agnostic_tasks"):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if ftype in ("int", "int | None"):
        if value.lower() in ("none", ""):
            return None
        return int(float(value))  # accepts 3e5 style
    if ftype == "float":
        return float(value)
    if ftype == "bool":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"{field_name}: bad boolean {value!r}")
    return value


def build_config(
    raw: dict[str, str] | None = None,
    profile: str | None = None,
    seed: int | None = None,
) -> ExperimentConfig:
    """Resolve precedence: dataclass defaults < toy profile < file keys < CLI."""
    raw = dict(raw or {})
    agnostic_flag = raw.pop("agnostic-phase", None)
    chosen_profile = profile or raw.get("profile", "paper")
    cfg = ExperimentConfig()
    if chosen_profile == "toy":
        cfg = replace(cfg, **TOY_OVERRIDES)
    elif chosen_profile != "paper":
        raise ConfigurationError(f"unknown profile {chosen_profile!r}")
    updates = {}
    for key, value in raw.items():
        if key in TABLE_KEYS:
            name = TABLE_KEYS[key]
        elif key in ARTIFACT_KEYS:
            name = ARTIFACT_KEYS[key]
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
        updates[name] = _coerce(name, value)
    updates["profile"] = chosen_profile
    cfg = replace(cfg, **updates)
    if seed is not None:
        cfg = replace(cfg, master_seed=seed)
    if agnostic_flag is not None:
        wants = _coerce("train_encoder", agnostic_flag)  # reuse bool coercion
        if wants != (cfg.algorithm == "tapd"):
            raise ConfigurationError(
                "agnostic-phase flag contradicts the selected algorithm"
            )
    validate_config(cfg)
    return cfg


def config_from_resolved(resolved: dict) -> ExperimentConfig:
    """Rebuild a config from a manifest's resolved-config snapshot."""
    d = dict(resolved)
    d["tasks"] = tuple(d["tasks"])
    d["agnostic_tasks"] = tuple(d["agnostic_tasks"])
    cfg = ExperimentConfig(**d)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {cfg.algorithm!r}")
    if cfg.variation not in (1, 2, 3):
        raise ConfigurationError(f"variation must be 1, 2 or 3, got {cfg.variation}")
    known = set(registered_tasks())
    for t in tuple(cfg.tasks) + tuple(cfg.agnostic_tasks):
        if t not in known:
            raise ConfigurationError(f"unknown task {t!r}; registered: {sorted(known)}")
    if cfg.algorithm == "tapd":
        if not cfg.agnostic_tasks:
            raise ConfigurationError("tapd needs a nonempty task-agnostic task set")
        if cfg.variation in (2, 3) and len(cfg.agnostic_tasks) != 1:
            raise ConfigurationError(
                f"variation {cfg.variation} uses a singleton task-agnostic set, "
                f"got {cfg.agnostic_tasks}"
            )
    for name in (
        "num_env_steps_progress",
        "num_env_steps_compress",
        "num_env_steps_agnostic",
        "num_env_steps_agnostic_compress",
        "num_samples_agnostic",
        "num_visits",
    ):
        if getattr(cfg, name) < 0:
            raise ConfigurationError(f"{name} must be >= 0")
    if cfg.num_steps < 1 or cfg.num_processes < 1:
        raise ConfigurationError("num-steps and num-processes must be >= 1")


# ---------------------------------------------------------------------------
# Network shapes per profile
# ---------------------------------------------------------------------------


def _tap_indices(layers: tuple) -> tuple[int, ...]:
    """Junctions: the activation after every conv block except the first,
    plus the trunk's final activation."""
    conv_act, last_act = [], None
    for i, layer in enumerate(layers):
        if isinstance(layer, Activation):
            last_act = i
            if i > 0 and isinstance(layers[i - 1], Conv):
                conv_act.append(i)
    taps = conv_act[1:]
    if last_act is not None and last_act not in taps:
        taps.append(last_act)
    return tuple(taps)


def column_spec(cfg: ExperimentConfig) -> NetworkSpec:
    if cfg.profile == "toy":
        layers = (
            Conv(8, 3, 2), Activation(),
            Conv(8, 3, 2), Activation(),
            Flatten(),
            Dense(64), Activation(),
        )
    else:
        layers = (
            Conv(32, 8, 4), Activation(),
            Conv(64, 4, 2), Activation(),
            Conv(32, 3, 1), Activation(),
            Flatten(),
            Dense(512), Activation(),
        )
    return NetworkSpec(
        input_shape=(cfg.frame_stack, cfg.obs_size, cfg.obs_size),
        layers=layers,
        policy_width=4,
        value_width=1,
        lateral_taps=_tap_indices(layers),
    )


def forward_model_spec(cfg: ExperimentConfig) -> ForwardModelSpec:
    if cfg.profile == "toy":
        encoder = (
            Conv(8, 3, 2), Activation(),
            Conv(8, 3, 2), Activation(),
            Flatten(),
        )
        hidden = 32
    else:
        encoder = tuple(
            piece
            for _ in range(5)
            for piece in (Conv(32, 3, 2, padding=1), Activation())
        ) + (Flatten(),)
        hidden = 256
    return ForwardModelSpec(
        input_shape=(cfg.frame_stack, cfg.obs_size, cfg.obs_size),
        encoder_layers=encoder,
        hidden_width=hidden,
    )
