import numpy as np
import pytest

from distilrl.errors import ConfigurationError, ContractError, NumericError
from distilrl.nn import (
    Activation,
    Conv,
    Dense,
    Flatten,
    NetworkSpec,
    backward,
    build_network,
    forward,
    layer_shapes,
    param_count,
)

from oracles import central_fd_gradients, max_rel_error


TOY = NetworkSpec(
    input_shape=(4, 12, 12),
    layers=(
        Conv(8, 3, 2), Activation("relu"),
        Conv(8, 3, 2), Activation("relu"),
        Flatten(),
        Dense(64), Activation("relu"),
    ),
    lateral_taps=(3, 6),
)


def test_build_is_deterministic():
    a = build_network(TOY, seed=7)
    b = build_network(TOY, seed=7)
    assert a.checksum() == b.checksum()
    for k in a.entries:
        assert np.array_equal(a.entries[k], b.entries[k])


def test_different_seeds_differ():
    assert build_network(TOY, 1).checksum() != build_network(TOY, 2).checksum()


def test_zero_width_dense_rejected():
    spec = NetworkSpec((4, 12, 12), (Flatten(), Dense(0)))
    with pytest.raises(ConfigurationError):
        layer_shapes(spec)


def test_conv_too_large_rejected():
    spec = NetworkSpec((4, 4, 4), (Conv(8, 5, 1), Flatten()))
    with pytest.raises(ConfigurationError) as ei:
        build_network(spec, 0)
    assert "layer 0" in str(ei.value)


def test_dense_on_spatial_input_rejected():
    spec = NetworkSpec((4, 12, 12), (Dense(16),))
    with pytest.raises(ConfigurationError):
        layer_shapes(spec)


def test_param_count_three_conv_profile():
    # Three conv blocks plus a 512-wide trunk sized for 12x12 inputs.
    spec = NetworkSpec(
        (4, 12, 12),
        (
            Conv(32, 3, 2), Activation(),
            Conv(64, 3, 1), Activation(),
            Conv(32, 3, 1), Activation(),
            Flatten(),
            Dense(512), Activation(),
        ),
    )
    # hand count: weights + biases per layer
    conv1 = 32 * 4 * 3 * 3 + 32
    conv2 = 64 * 32 * 3 * 3 + 64
    conv3 = 32 * 64 * 3 * 3 + 32
    dense = 32 * 512 + 512
    policy = 512 * 4 + 4
    value = 512 * 1 + 1
    expected = conv1 + conv2 + conv3 + dense + policy + value
    assert param_count(spec) == expected
    assert build_network(spec, 1).n_params() == expected


def test_forward_shapes_and_taps():
    params = build_network(TOY, 3)
    x = np.random.default_rng(0).random((10, 4, 12, 12))
    out = forward(params, TOY, x)
    assert out.logits.shape == (10, 4)
    assert out.value.shape == (10, 1)
    assert set(out.taps) == {3, 6}
    assert out.taps[3].shape == (10, 8, 2, 2)
    assert out.taps[6].shape == (10, 64)
    assert np.all(np.isfinite(out.logits))


def test_zero_input_gives_zero_heads():
    # biases start at zero, so an all-zero stack propagates zeros to both heads
    params = build_network(TOY, 11)
    out = forward(params, TOY, np.zeros((2, 4, 12, 12)))
    assert np.array_equal(out.logits, np.zeros((2, 4)))
    assert np.array_equal(out.value, np.zeros((2, 1)))


def test_forward_rejects_bad_shape_and_nan():
    params = build_network(TOY, 3)
    with pytest.raises(ContractError):
        forward(params, TOY, np.zeros((2, 4, 12, 11)))
    bad = np.zeros((1, 4, 12, 12))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        forward(params, TOY, bad)


def test_backward_requires_cache():
    params = build_network(TOY, 3)
    with pytest.raises(ContractError):
        backward(params, TOY, None, np.zeros((1, 4)), None)


def test_zero_loss_gives_zero_gradients():
    params = build_network(TOY, 3)
    x = np.random.default_rng(1).random((4, 4, 12, 12))
    out = forward(params, TOY, x, need_cache=True)
    grads, _ = backward(params, TOY, out.cache, np.zeros((4, 4)), np.zeros((4, 1)))
    for g in grads.entries.values():
        assert np.array_equal(g, np.zeros_like(g))


def test_unused_value_head_gets_zero_gradient():
    params = build_network(TOY, 3)
    x = np.random.default_rng(2).random((4, 4, 12, 12))
    out = forward(params, TOY, x, need_cache=True)
    grads, _ = backward(params, TOY, out.cache, np.ones((4, 4)), None)
    assert np.array_equal(grads.entries["value.w"], np.zeros_like(grads.entries["value.w"]))
    assert np.array_equal(grads.entries["value.b"], np.zeros_like(grads.entries["value.b"]))


def test_single_dense_layer_hand_gradient():
    # y = x @ W (policy head on a flat input), loss = sum(y):
    # dL/dW = x summed over batch, broadcast across output columns.
    spec = NetworkSpec((3,), (), policy_width=2, value_width=1)
    params = build_network(spec, 5)
    x = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]])
    out = forward(params, spec, x, need_cache=True)
    grads, _ = backward(params, spec, out.cache, np.ones((2, 2)), None)
    expect_w = x.sum(axis=0)[:, None] @ np.ones((1, 2))
    assert np.allclose(grads.entries["policy.w"], expect_w, atol=1e-12)
    assert np.allclose(grads.entries["policy.b"], [2.0, 2.0], atol=1e-12)


def _quadratic_loss_targets(rng, spec, batch):
    c = rng.normal(size=(batch, spec.policy_width))
    d = rng.normal(size=(batch, spec.value_width))
    return c, d


def _quadratic_loss(params, spec, x, c, d):
    out = forward(params, spec, x)
    return 0.5 * float(np.sum((out.logits - c) ** 2)) + 0.5 * float(np.sum((out.value - d) ** 2))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    spec = NetworkSpec(
        (2, 6, 6),
        (
            Conv(3, 3, 2, padding=1), Activation(),
            Flatten(),
            Dense(8), Activation(),
        ),
        policy_width=4,
    )
    params = build_network(spec, seed + 100)
    x = rng.random((3, 2, 6, 6))
    c, d = _quadratic_loss_targets(rng, spec, 3)

    out = forward(params, spec, x, need_cache=True)
    grads, _ = backward(params, spec, out.cache, out.logits - c, out.value - d)
    fd = central_fd_gradients(lambda p: _quadratic_loss(p, spec, x, c, d), params)
    assert max_rel_error(grads.entries, fd) < 1e-4


def test_injection_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    spec = NetworkSpec(
        (2, 6, 6),
        (Conv(3, 3, 2), Activation(), Flatten(), Dense(6), Activation()),
        lateral_taps=(1, 4),
    )
    params = build_network(spec, 42)
    x = rng.random((2, 2, 6, 6))
    inj = {1: rng.normal(size=(2, 3, 2, 2)) * 0.1, 4: rng.normal(size=(2, 6)) * 0.1}
    c, d = _quadratic_loss_targets(rng, spec, 2)

    out = forward(params, spec, x, inject=inj, need_cache=True)
    _, d_inj = backward(params, spec, out.cache, out.logits - c, out.value - d)

    # finite differences on the injected tensors themselves
    for idx in inj:
        g = np.zeros_like(inj[idx])
        flat_src = inj[idx].reshape(-1)
        flat_dst = g.reshape(-1)
        step = 1e-5
        for i in range(flat_src.size):
            orig = flat_src[i]
            flat_src[i] = orig + step
            up = _loss_with_inject(params, spec, x, inj, c, d)
            flat_src[i] = orig - step
            down = _loss_with_inject(params, spec, x, inj, c, d)
            flat_src[i] = orig
            flat_dst[i] = (up - down) / (2 * step)
        assert max_rel_error({"inj": d_inj[idx]}, {"inj": g}) < 1e-4


def _loss_with_inject(params, spec, x, inj, c, d):
    out = forward(params, spec, x, inject=inj)
    return 0.5 * float(np.sum((out.logits - c) ** 2)) + 0.5 * float(np.sum((out.value - d) ** 2))


def test_zeroed_adaptor_injection_is_identity():
    params = build_network(TOY, 3)
    x = np.random.default_rng(3).random((2, 4, 12, 12))
    plain = forward(params, TOY, x)
    injected = forward(
        params, TOY, x, inject={3: np.zeros((2, 8, 2, 2)), 6: np.zeros((2, 64))}
    )
    assert np.array_equal(plain.logits, injected.logits)
    assert np.array_equal(plain.value, injected.value)
