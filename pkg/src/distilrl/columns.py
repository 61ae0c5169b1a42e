"""Two-column agent: a trainable active column wired to a frozen knowledge
base through additive lateral adaptors.

Each lateral tap of the shared network spec gets its own adaptor: a
per-position projection (1x1 conv realized as a dense map over channels for
spatial taps, a plain dense map for vector taps) followed by a one-hidden-
layer head, whose output is added to the active column's activation at the
same layer. The knowledge base runs in inference mode only; no gradient ever
reaches its parameters through the laterals. Lateral connections stay
disabled until the first compression finishes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dists import CategoricalDist, dist_from_logits
from .errors import ContractError
from .nn import (
    Array,
    GradientStore,
    NetworkSpec,
    ParameterStore,
    build_network,
    dense_backward,
    dense_forward,
    init_dense,
    layer_shapes,
    relu_backward,
    relu_forward,
    RELU_GAIN,
)
from . import nn
from .seeds import derive_seed

logger = logging.getLogger(__name__)

TRAINABLE = "trainable"
FROZEN = "frozen"


@dataclass
class Column:
    spec: NetworkSpec
    params: ParameterStore
    mode: str = TRAINABLE
    role: str = "active"


def set_mode(col: Column, mode: str) -> None:
    if mode not in (TRAINABLE, FROZEN):
        raise ContractError(f"unknown mode {mode!r}")
    col.mode = mode


# ---------------------------------------------------------------------------
# Lateral adaptors
# ---------------------------------------------------------------------------


def build_adaptors(spec: NetworkSpec, seed: int) -> ParameterStore:
    """One two-layer adaptor per lateral tap; hidden width equals the tap's
    channel/feature width so shapes line up at the additive junction."""
    shapes = layer_shapes(spec)
    rng = np.random.default_rng(seed)
    entries: dict[str, Array] = {}
    for tap in spec.lateral_taps:
        width = shapes[tap][0]
        w1, b1 = init_dense(rng, width, width, RELU_GAIN)
        w2, b2 = init_dense(rng, width, width, 1.0)
        entries[f"adaptor{tap}.w1"] = w1
        entries[f"adaptor{tap}.b1"] = b1
        entries[f"adaptor{tap}.w2"] = w2
        entries[f"adaptor{tap}.b2"] = b2
    return ParameterStore(entries, seed)


def _channels_last(x: Array) -> tuple[Array, tuple]:
    if x.ndim == 4:  # (B, C, H, W) -> (B*H*W, C)
        b, c, h, w = x.shape
        return x.transpose(0, 2, 3, 1).reshape(b * h * w, c), (b, c, h, w)
    return x, x.shape


def _channels_back(x: Array, shape: tuple) -> Array:
    if len(shape) == 4:
        b, c, h, w = shape
        return x.reshape(b, h, w, c).transpose(0, 3, 1, 2)
    return x


def adaptor_forward(
    adaptors: ParameterStore, taps: dict[int, Array], need_cache: bool = False
) -> tuple[dict[int, Array], dict[int, tuple] | None]:
    inject: dict[int, Array] = {}
    caches: dict[int, tuple] = {}
    for tap, activation in taps.items():
        flat, shape = _channels_last(activation)
        h_pre, x_cache = dense_forward(
            flat, adaptors.entries[f"adaptor{tap}.w1"], adaptors.entries[f"adaptor{tap}.b1"]
        )
        h, mask = relu_forward(h_pre)
        out, h_cache = dense_forward(
            h, adaptors.entries[f"adaptor{tap}.w2"], adaptors.entries[f"adaptor{tap}.b2"]
        )
        inject[tap] = _channels_back(out, shape)
        if need_cache:
            caches[tap] = (x_cache, mask, h_cache, shape)
    return inject, (caches if need_cache else None)


def adaptor_backward(
    adaptors: ParameterStore, caches: dict[int, tuple], d_inject: dict[int, Array]
) -> dict[str, Array]:
    grads: dict[str, Array] = {}
    for tap, (x_cache, mask, h_cache, shape) in caches.items():
        dy, _ = _channels_last(d_inject[tap])
        dh, dw2, db2 = dense_backward(h_cache, adaptors.entries[f"adaptor{tap}.w2"], dy)
        dh = relu_backward(mask, dh)
        _, dw1, db1 = dense_backward(x_cache, adaptors.entries[f"adaptor{tap}.w1"], dh)
        grads[f"adaptor{tap}.w1"] = dw1
        grads[f"adaptor{tap}.b1"] = db1
        grads[f"adaptor{tap}.w2"] = dw2
        grads[f"adaptor{tap}.b2"] = db2
    return grads


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


@dataclass
class AgentAssembly:
    active: Column
    kb: Column
    adaptors: ParameterStore
    lateral_enabled: bool = False


def make_assembly(spec: NetworkSpec, seed: int) -> AgentAssembly:
    active = Column(spec, build_network(spec, derive_seed(seed, "active")), role="active")
    kb = Column(spec, build_network(spec, derive_seed(seed, "kb")), role="knowledge_base")
    adaptors = build_adaptors(spec, derive_seed(seed, "adaptors"))
    return AgentAssembly(active, kb, adaptors)


def _lateral_inject(asm: AgentAssembly, obs: Array, need_cache: bool):
    if not asm.lateral_enabled or not asm.active.spec.lateral_taps:
        return None, None
    kb_out = nn.forward(asm.kb.params, asm.kb.spec, obs)
    return adaptor_forward(asm.adaptors, kb_out.taps, need_cache=need_cache)


def active_forward(
    asm: AgentAssembly, obs: Array
) -> tuple[CategoricalDist, Array, dict[int, Array]]:
    """Policy/value of the active column, with frozen-kb laterals when enabled."""
    inject, _ = _lateral_inject(asm, obs, need_cache=False)
    out = nn.forward(asm.active.params, asm.active.spec, obs, inject=inject)
    return dist_from_logits(out.logits), out.value[:, 0], out.taps


def kb_forward(asm: AgentAssembly, obs: Array) -> tuple[CategoricalDist, Array, dict[int, Array]]:
    """Pure knowledge-base network; never uses laterals."""
    out = nn.forward(asm.kb.params, asm.kb.spec, obs)
    return dist_from_logits(out.logits), out.value[:, 0], out.taps


def reinit_active(asm: AgentAssembly, seed: int) -> None:
    """Redraw active-column and adaptor parameters; kb and the lateral flag
    are untouched."""
    asm.active.params = build_network(asm.active.spec, derive_seed(seed, "active"))
    asm.adaptors = build_adaptors(asm.active.spec, derive_seed(seed, "adaptors"))


# ---------------------------------------------------------------------------
# Model adapters for the A2C / distillation updates
# ---------------------------------------------------------------------------


class ActiveModel:
    """Trainable view over (active column + adaptors)."""

    def __init__(self, asm: AgentAssembly):
        self.asm = asm
        self._cache = None

    @property
    def trainable(self) -> bool:
        return self.asm.active.mode == TRAINABLE

    def act(self, obs: Array):
        dist, values, _ = active_forward(self.asm, obs)
        return dist, values

    def forward_train(self, obs: Array):
        inject, adaptor_caches = _lateral_inject(self.asm, obs, need_cache=True)
        out = nn.forward(
            self.asm.active.params, self.asm.active.spec, obs, inject=inject, need_cache=True
        )
        return out.logits, out.value[:, 0], (out.cache, adaptor_caches)

    def backward(self, cache, d_logits, d_value) -> GradientStore:
        fwd_cache, adaptor_caches = cache
        grads, d_inj = nn.backward(
            self.asm.active.params, self.asm.active.spec, fwd_cache, d_logits, d_value
        )
        if adaptor_caches:
            adaptor_grads = adaptor_backward(self.asm.adaptors, adaptor_caches, d_inj)
            grads.entries.update(adaptor_grads)
        else:
            # keep the key set aligned with params_view when laterals are off
            for k, v in self.asm.adaptors.entries.items():
                grads.entries[k] = np.zeros_like(v)
        return grads

    def params_view(self) -> dict[str, Array]:
        merged = dict(self.asm.active.params.entries)
        merged.update(self.asm.adaptors.entries)
        return merged

    def assign(self, entries: dict[str, Array]) -> None:
        for k, v in entries.items():
            if k.startswith("adaptor"):
                self.asm.adaptors.entries[k] = v
            else:
                self.asm.active.params.entries[k] = v


class ColumnModel:
    """Plain single-column view (knowledge base or the one-network baseline)."""

    def __init__(self, col: Column):
        self.col = col

    @property
    def trainable(self) -> bool:
        return self.col.mode == TRAINABLE

    def act(self, obs: Array):
        out = nn.forward(self.col.params, self.col.spec, obs)
        return dist_from_logits(out.logits), out.value[:, 0]

    def forward_train(self, obs: Array):
        out = nn.forward(self.col.params, self.col.spec, obs, need_cache=True)
        return out.logits, out.value[:, 0], out.cache

    def backward(self, cache, d_logits, d_value) -> GradientStore:
        grads, _ = nn.backward(self.col.params, self.col.spec, cache, d_logits, d_value)
        return grads

    def params_view(self) -> dict[str, Array]:
        return dict(self.col.params.entries)

    def assign(self, entries: dict[str, Array]) -> None:
        for k, v in entries.items():
            self.col.params.entries[k] = v
