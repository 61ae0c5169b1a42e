"""Deterministic dense/conv network substrate with exact reverse-mode gradients.

Everything runs in float64 on numpy. Networks are straight-line graphs: a
trunk of conv/flatten/dense/activation layers followed by two linear heads
(policy logits and state value). Selected trunk activations can be exported
("taps") and externally computed tensors can be added at those same points
("injections"); both are used to wire lateral connections between columns.

Gradients are computed layer by layer from cached forward activations, so a
backward call must receive the cache produced by the matching forward call.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, NumericError

Array = np.ndarray

FLOAT = np.float64


# ---------------------------------------------------------------------------
# Layer descriptors and network specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int
    padding: int = 0


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    width: int


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"  # "relu" | "identity"


LayerSpec = Conv | Flatten | Dense | Activation


@dataclass(frozen=True)
class NetworkSpec:
    """Static description of one column: trunk layers plus policy/value heads.

    ``input_shape`` is (channels, height, width) of a single observation stack.
    ``lateral_taps`` lists trunk layer indices whose outputs are exported for
    lateral connections; the same indices are valid injection points.
    """

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    policy_width: int = 4
    value_width: int = 1
    lateral_taps: tuple[int, ...] = ()

    def spec_hash(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0:
        return 0
    return span // stride + 1


def layer_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Output shape of every trunk layer. Raises if shapes do not compose."""
    shapes: list[tuple[int, ...]] = []
    cur: tuple[int, ...] = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            if len(cur) != 3:
                raise ConfigurationError(
                    f"layer {i}: Conv needs a (C,H,W) input, got shape {cur}"
                )
            if layer.out_channels < 1 or layer.kernel < 1 or layer.stride < 1:
                raise ConfigurationError(f"layer {i}: degenerate Conv {layer}")
            c, h, w = cur
            ho = _conv_out(h, layer.kernel, layer.stride, layer.padding)
            wo = _conv_out(w, layer.kernel, layer.stride, layer.padding)
            if ho < 1 or wo < 1:
                raise ConfigurationError(
                    f"layer {i}: Conv kernel {layer.kernel} does not fit input {cur}"
                )
            cur = (layer.out_channels, ho, wo)
        elif isinstance(layer, Flatten):
            cur = (int(np.prod(cur)),)
        elif isinstance(layer, Dense):
            if len(cur) != 1:
                raise ConfigurationError(
                    f"layer {i}: Dense needs a flat input, got shape {cur} "
                    "(insert Flatten first)"
                )
            if layer.width < 1:
                raise ConfigurationError(f"layer {i}: Dense width must be >= 1")
            cur = (layer.width,)
        elif isinstance(layer, Activation):
            if layer.kind not in ("relu", "identity"):
                raise ConfigurationError(f"layer {i}: unknown activation {layer.kind!r}")
        else:
            raise ConfigurationError(f"layer {i}: unknown layer spec {layer!r}")
        shapes.append(cur)
    if len(cur) != 1:
        raise ConfigurationError(
            f"trunk must end with a flat feature vector, got shape {cur}"
        )
    for t in spec.lateral_taps:
        if not 0 <= t < len(spec.layers):
            raise ConfigurationError(f"lateral tap {t} out of range")
    if spec.policy_width < 1 or spec.value_width < 1:
        raise ConfigurationError("head widths must be >= 1")
    return shapes


def trunk_width(spec: NetworkSpec) -> int:
    return layer_shapes(spec)[-1][0]


def param_count(spec: NetworkSpec) -> int:
    shapes = layer_shapes(spec)
    total = 0
    cur: tuple[int, ...] = tuple(spec.input_shape)
    for layer, out in zip(spec.layers, shapes):
        if isinstance(layer, Conv):
            total += layer.out_channels * cur[0] * layer.kernel**2 + layer.out_channels
        elif isinstance(layer, Dense):
            total += cur[0] * layer.width + layer.width
        cur = out
    d = cur[0]
    total += d * spec.policy_width + spec.policy_width
    total += d * spec.value_width + spec.value_width
    return total


# ---------------------------------------------------------------------------
# Parameter and gradient stores
# ---------------------------------------------------------------------------


@dataclass
class ParameterStore:
    """Named collection of float64 arrays for one network column."""

    entries: dict[str, Array]
    seed: int

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self.entries.items()}, self.seed)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.entries):
            arr = self.entries[name]
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def n_params(self) -> int:
        return int(sum(v.size for v in self.entries.values()))


@dataclass
class GradientStore:
    """Gradient arrays mirroring a ParameterStore's key set and shapes."""

    entries: dict[str, Array]

    def validate_against(self, params: ParameterStore) -> None:
        if set(self.entries) != set(params.entries):
            missing = set(params.entries) ^ set(self.entries)
            raise ContractError(f"gradient/parameter key mismatch: {sorted(missing)}")
        for k, g in self.entries.items():
            if g.shape != params.entries[k].shape:
                raise ContractError(f"gradient shape mismatch for {k!r}")


def assert_all_finite(entries: dict[str, Array], what: str) -> None:
    for k, v in entries.items():
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite values in {what} entry {k!r}")


def zero_gradients(params: ParameterStore) -> GradientStore:
    return GradientStore({k: np.zeros_like(v) for k, v in params.entries.items()})


def add_gradients(into: GradientStore, extra: dict[str, Array]) -> None:
    for k, g in extra.items():
        if k in into.entries:
            into.entries[k] = into.entries[k] + g
        else:
            into.entries[k] = g.copy()


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _uniform(rng: np.random.Generator, bound: float, shape: tuple[int, ...]) -> Array:
    return rng.uniform(-bound, bound, size=shape).astype(FLOAT)


def init_dense(rng: np.random.Generator, fan_in: int, width: int, gain: float) -> tuple[Array, Array]:
    # He-style fan-in scaling: gain^2 * 3 / fan_in variance bound for uniform draws.
    bound = gain * np.sqrt(3.0 / fan_in)
    return _uniform(rng, bound, (fan_in, width)), np.zeros(width, dtype=FLOAT)


def init_conv(rng: np.random.Generator, in_ch: int, layer: Conv, gain: float) -> tuple[Array, Array]:
    fan_in = in_ch * layer.kernel**2
    bound = gain * np.sqrt(3.0 / fan_in)
    w = _uniform(rng, bound, (layer.out_channels, in_ch, layer.kernel, layer.kernel))
    return w, np.zeros(layer.out_channels, dtype=FLOAT)


RELU_GAIN = float(np.sqrt(2.0))


def build_network(spec: NetworkSpec, seed: int) -> ParameterStore:
    """Deterministically initialize all parameters for ``spec``.

    Conv/dense trunk weights use rectifier-scaled uniform fan-in draws; the
    linear heads use gain 1. Biases start at zero. Identical (spec, seed)
    pairs produce bit-identical stores.
    """
    shapes = layer_shapes(spec)
    rng = np.random.default_rng(seed)
    entries: dict[str, Array] = {}
    cur: tuple[int, ...] = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            w, b = init_conv(rng, cur[0], layer, RELU_GAIN)
            entries[f"layer{i}.w"] = w
            entries[f"layer{i}.b"] = b
        elif isinstance(layer, Dense):
            w, b = init_dense(rng, cur[0], layer.width, RELU_GAIN)
            entries[f"layer{i}.w"] = w
            entries[f"layer{i}.b"] = b
        cur = shapes[i]
    d = cur[0]
    entries["policy.w"], entries["policy.b"] = init_dense(rng, d, spec.policy_width, 1.0)
    entries["value.w"], entries["value.b"] = init_dense(rng, d, spec.value_width, 1.0)
    assert_all_finite(entries, "initialized parameters")
    return ParameterStore(entries, seed)


# ---------------------------------------------------------------------------
# Layer kernels (forward + backward)
# ---------------------------------------------------------------------------


def _im2col(x: Array, kernel: int, stride: int, padding: int) -> tuple[Array, tuple[int, int]]:
    """(B,C,H,W) -> (B, Ho*Wo, C*k*k) patch matrix."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b, c, h, w = x.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, ho, wo, kernel, kernel),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
    )
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * kernel * kernel)
    return np.ascontiguousarray(cols), (ho, wo)


def conv_forward(x: Array, w: Array, b: Array, stride: int, padding: int):
    out_ch, in_ch, k, _ = w.shape
    cols, (ho, wo) = _im2col(x, k, stride, padding)
    y = cols @ w.reshape(out_ch, in_ch * k * k).T + b
    y = y.transpose(0, 2, 1).reshape(x.shape[0], out_ch, ho, wo)
    cache = (x.shape, cols, w, stride, padding, ho, wo)
    return y, cache


def conv_backward(cache, dy: Array):
    x_shape, cols, w, stride, padding, ho, wo = cache
    bsz, _, h, wd = x_shape
    out_ch, in_ch, k, _ = w.shape
    dy_mat = dy.reshape(bsz, out_ch, ho * wo).transpose(0, 2, 1)  # (B, P, out)
    w_mat = w.reshape(out_ch, in_ch * k * k)
    dw = np.tensordot(dy_mat, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
    db = dy_mat.sum(axis=(0, 1))
    dcols = dy_mat @ w_mat  # (B, P, C*k*k)
    dpatch = dcols.reshape(bsz, ho, wo, in_ch, k, k)
    hp, wp = h + 2 * padding, wd + 2 * padding
    dxp = np.zeros((bsz, in_ch, hp, wp), dtype=FLOAT)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += (
                dpatch[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        dxp = dxp[:, :, padding : hp - padding, padding : wp - padding]
    return dxp, dw, db


def dense_forward(x: Array, w: Array, b: Array):
    return x @ w + b, x


def dense_backward(cache_x: Array, w: Array, dy: Array):
    dw = cache_x.T @ dy
    db = dy.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def relu_forward(x: Array):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(mask: Array, dy: Array) -> Array:
    return dy * mask


# ---------------------------------------------------------------------------
# Whole-network forward/backward
# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    spec: NetworkSpec
    batch: int
    layer_caches: list
    trunk_out: Array
    inject_indices: tuple[int, ...]


@dataclass
class ForwardResult:
    logits: Array
    value: Array
    taps: dict[int, Array]
    cache: ForwardCache = field(repr=False, default=None)


def forward(
    params: ParameterStore,
    spec: NetworkSpec,
    x: Array,
    inject: dict[int, Array] | None = None,
    need_cache: bool = False,
) -> ForwardResult:
    """Run the column on a batch of observations.

    ``inject`` maps trunk layer indices to tensors added to that layer's
    output (the lateral junction). Exported taps reflect the post-injection
    activations. With ``need_cache`` the result can be fed to :func:`backward`.
    """
    x = np.asarray(x, dtype=FLOAT)
    expected = (x.shape[0],) + tuple(spec.input_shape)
    if x.shape != expected:
        raise ContractError(f"input shape {x.shape} != expected {expected}")
    if np.isnan(x).any():
        raise NumericError("NaN in network input")
    inject = inject or {}
    for idx in inject:
        if idx >= len(spec.layers):
            raise ConfigurationError(f"injection index {idx} out of range")
    caches: list = []
    taps: dict[int, Array] = {}
    cur = x
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            cur, cache = conv_forward(
                cur, params.entries[f"layer{i}.w"], params.entries[f"layer{i}.b"], layer.stride, layer.padding
            )
        elif isinstance(layer, Flatten):
            cache = cur.shape
            cur = cur.reshape(cur.shape[0], -1)
        elif isinstance(layer, Dense):
            cur, cache = dense_forward(
                cur, params.entries[f"layer{i}.w"], params.entries[f"layer{i}.b"]
            )
        elif isinstance(layer, Activation):
            if layer.kind == "relu":
                cur, cache = relu_forward(cur)
            else:
                cache = None
        if i in inject:
            add = inject[i]
            if add.shape != cur.shape:
                raise ConfigurationError(
                    f"lateral junction at layer {i}: injected shape {add.shape} "
                    f"!= activation shape {cur.shape}"
                )
            cur = cur + add
        if i in spec.lateral_taps:
            taps[i] = cur
        caches.append(cache)
    logits = cur @ params.entries["policy.w"] + params.entries["policy.b"]
    value = cur @ params.entries["value.w"] + params.entries["value.b"]
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(value))):
        raise NumericError("non-finite network output")
    cache_obj = (
        ForwardCache(spec, x.shape[0], caches, cur, tuple(sorted(inject)))
        if need_cache
        else None
    )
    return ForwardResult(logits, value, taps, cache_obj)


def seq_init(
    rng: np.random.Generator,
    layers: tuple[LayerSpec, ...],
    input_shape: tuple[int, ...],
    prefix: str,
    entries: dict[str, Array],
) -> tuple[int, ...]:
    """Initialize a headless layer stack under ``prefix``; returns its output shape."""
    cur: tuple[int, ...] = tuple(input_shape)
    for i, layer in enumerate(layers):
        if isinstance(layer, Conv):
            w, b = init_conv(rng, cur[0], layer, RELU_GAIN)
            entries[f"{prefix}{i}.w"] = w
            entries[f"{prefix}{i}.b"] = b
            c, h, wd = cur
            cur = (
                layer.out_channels,
                _conv_out(h, layer.kernel, layer.stride, layer.padding),
                _conv_out(wd, layer.kernel, layer.stride, layer.padding),
            )
        elif isinstance(layer, Flatten):
            cur = (int(np.prod(cur)),)
        elif isinstance(layer, Dense):
            w, b = init_dense(rng, cur[0], layer.width, RELU_GAIN)
            entries[f"{prefix}{i}.w"] = w
            entries[f"{prefix}{i}.b"] = b
            cur = (layer.width,)
    return cur


def seq_forward(
    params: ParameterStore,
    prefix: str,
    layers: tuple[LayerSpec, ...],
    x: Array,
    need_cache: bool = False,
):
    """Forward through a headless layer stack; returns (output, caches)."""
    caches: list = []
    cur = x
    for i, layer in enumerate(layers):
        if isinstance(layer, Conv):
            cur, cache = conv_forward(
                cur, params.entries[f"{prefix}{i}.w"], params.entries[f"{prefix}{i}.b"], layer.stride, layer.padding
            )
        elif isinstance(layer, Flatten):
            cache = cur.shape
            cur = cur.reshape(cur.shape[0], -1)
        elif isinstance(layer, Dense):
            cur, cache = dense_forward(
                cur, params.entries[f"{prefix}{i}.w"], params.entries[f"{prefix}{i}.b"]
            )
        elif isinstance(layer, Activation):
            if layer.kind == "relu":
                cur, cache = relu_forward(cur)
            else:
                cache = None
        if need_cache:
            caches.append(cache)
    return cur, (caches if need_cache else None)


def seq_backward(
    params: ParameterStore,
    prefix: str,
    layers: tuple[LayerSpec, ...],
    caches: list,
    dy: Array,
) -> tuple[Array, dict[str, Array]]:
    grads: dict[str, Array] = {}
    cur = dy
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        lc = caches[i]
        if isinstance(layer, Conv):
            cur, dw, db = conv_backward(lc, cur)
            grads[f"{prefix}{i}.w"] = dw
            grads[f"{prefix}{i}.b"] = db
        elif isinstance(layer, Flatten):
            cur = cur.reshape(lc)
        elif isinstance(layer, Dense):
            cur, dw, db = dense_backward(lc, params.entries[f"{prefix}{i}.w"], cur)
            grads[f"{prefix}{i}.w"] = dw
            grads[f"{prefix}{i}.b"] = db
        elif isinstance(layer, Activation):
            if layer.kind == "relu":
                cur = relu_backward(lc, cur)
    return cur, grads


def backward(
    params: ParameterStore,
    spec: NetworkSpec,
    cache: ForwardCache,
    d_logits: Array | None,
    d_value: Array | None,
) -> tuple[GradientStore, dict[int, Array]]:
    """Exact reverse-mode pass; returns parameter gradients and, for every
    injected junction, the gradient with respect to the injected tensor.

    Heads that received no upstream gradient get exact zero gradients.
    """
    if cache is None or cache.spec is not spec:
        raise ContractError("backward() needs the cache from a matching forward(need_cache=True)")
    grads: dict[str, Array] = {k: np.zeros_like(v) for k, v in params.entries.items()}
    t = cache.trunk_out
    d_trunk = np.zeros_like(t)
    if d_logits is not None:
        grads["policy.w"] = t.T @ d_logits
        grads["policy.b"] = d_logits.sum(axis=0)
        d_trunk = d_trunk + d_logits @ params.entries["policy.w"].T
    if d_value is not None:
        grads["value.w"] = t.T @ d_value
        grads["value.b"] = d_value.sum(axis=0)
        d_trunk = d_trunk + d_value @ params.entries["value.w"].T
    d_inject: dict[int, Array] = {}
    cur = d_trunk
    for i in range(len(spec.layers) - 1, -1, -1):
        if i in cache.inject_indices:
            d_inject[i] = cur.copy()
        layer = spec.layers[i]
        lc = cache.layer_caches[i]
        if isinstance(layer, Conv):
            cur, dw, db = conv_backward(lc, cur)
            grads[f"layer{i}.w"] = dw
            grads[f"layer{i}.b"] = db
        elif isinstance(layer, Flatten):
            cur = cur.reshape(lc)
        elif isinstance(layer, Dense):
            dx, dw, db = dense_backward(lc, params.entries[f"layer{i}.w"], cur)
            grads[f"layer{i}.w"] = dw
            grads[f"layer{i}.b"] = db
            cur = dx
        elif isinstance(layer, Activation):
            if layer.kind == "relu":
                cur = relu_backward(lc, cur)
    return GradientStore(grads), d_inject
