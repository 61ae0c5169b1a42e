import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distilrl.curiosity import (
    ForwardModelSpec,
    IntrinsicConfig,
    build_forward_model,
    curiosity_update,
    encode,
    forward_loss,
    forward_losses,
    intrinsic_reward,
    predict_next_features,
)
from distilrl.errors import ConfigurationError, ContractError
from distilrl.nn import Activation, Conv, Dense, Flatten, ParameterStore
from distilrl.optim import rmsprop_init

from oracles import central_fd_gradients, max_rel_error

TOY_FM = ForwardModelSpec(
    input_shape=(4, 12, 12),
    encoder_layers=(Conv(8, 3, 2), Activation(), Conv(8, 3, 2), Activation(), Flatten()),
    hidden_width=32,
)


def test_toy_profile_feature_length_is_32():
    fm = build_forward_model(TOY_FM, 0)
    assert fm.feature_dim == 32
    feats, _ = encode(fm, np.random.default_rng(0).random((5, 4, 12, 12)))
    assert feats.shape == (5, 32)


def test_encode_is_deterministic():
    fm = build_forward_model(TOY_FM, 1)
    x = np.random.default_rng(1).random((2, 4, 12, 12))
    a, _ = encode(fm, x)
    b, _ = encode(fm, x)
    assert np.array_equal(a, b)


def test_encode_shape_contract():
    fm = build_forward_model(TOY_FM, 2)
    with pytest.raises(ContractError):
        encode(fm, np.zeros((1, 4, 12, 11)))


def test_epsilon_must_be_positive():
    with pytest.raises(ConfigurationError):
        IntrinsicConfig(epsilon=0.0)


def test_forward_loss_zero_when_prediction_matches_target():
    # flatten-only encoder, zeroed predictor, zero next state: target == pred == 0
    spec = ForwardModelSpec((1, 2, 2), (Flatten(),), hidden_width=3)
    fm = build_forward_model(spec, 0)
    for k in ("pred1.w", "pred1.b", "pred2.w", "pred2.b"):
        fm.params.entries[k] = np.zeros_like(fm.params.entries[k])
    loss = forward_loss(fm, np.ones((1, 2, 2)), 2, np.zeros((1, 2, 2)))
    assert loss == 0.0


def test_forward_loss_closed_form_distance():
    # pred [0,0] vs target [1,1] -> squared L2 distance 2.0
    spec = ForwardModelSpec((2, 1, 1), (Flatten(),), hidden_width=3)
    fm = build_forward_model(spec, 0)
    for k in ("pred1.w", "pred1.b", "pred2.w", "pred2.b"):
        fm.params.entries[k] = np.zeros_like(fm.params.entries[k])
    loss = forward_loss(fm, np.zeros((2, 1, 1)), 0, np.ones((2, 1, 1)))
    assert loss == pytest.approx(2.0, abs=1e-12)


def test_intrinsic_reward_closed_forms():
    cfg = IntrinsicConfig(epsilon=1e-8)
    assert intrinsic_reward(1.0 - 1e-8, cfg) == pytest.approx(0.0, abs=1e-12)
    assert intrinsic_reward(0.0, cfg) == pytest.approx(np.log(1e-8), abs=1e-9)
    assert intrinsic_reward(0.0, cfg) == pytest.approx(-18.42068, abs=1e-4)


@settings(max_examples=100)
@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_intrinsic_reward_monotone_and_bounded(l1, l2):
    cfg = IntrinsicConfig()
    r1, r2 = intrinsic_reward(l1, cfg), intrinsic_reward(l2, cfg)
    if l1 < l2:
        assert r1 <= r2
        if (l2 + cfg.epsilon) > (l1 + cfg.epsilon) * (1 + 1e-12):
            assert r1 < r2  # strict once the gap clears float resolution
    assert r1 >= np.log(cfg.epsilon) - 1e-12


def test_intrinsic_reward_rejects_negative_loss():
    with pytest.raises(ContractError):
        intrinsic_reward(-0.1, IntrinsicConfig())


def test_zero_loss_update_leaves_parameters_unchanged():
    spec = ForwardModelSpec((1, 2, 2), (Flatten(),), hidden_width=3)
    fm = build_forward_model(spec, 0)
    for k in ("pred1.w", "pred1.b", "pred2.w", "pred2.b"):
        fm.params.entries[k] = np.zeros_like(fm.params.entries[k])
    before = fm.params.checksum()
    opt = rmsprop_init(fm.params)
    obs = np.zeros((4, 1, 2, 2))
    _, stats = curiosity_update(fm, obs, np.zeros(4, dtype=int), obs, opt, IntrinsicConfig())
    assert stats.loss_before == 0.0
    assert fm.params.checksum() == before


def test_empty_batch_rejected():
    fm = build_forward_model(TOY_FM, 3)
    opt = rmsprop_init(fm.params)
    with pytest.raises(ContractError):
        curiosity_update(fm, np.zeros((0, 4, 12, 12)), np.zeros(0, dtype=int), np.zeros((0, 4, 12, 12)), opt, IntrinsicConfig())


def test_forward_loss_gradient_matches_finite_differences():
    spec = ForwardModelSpec(
        (2, 6, 6), (Conv(3, 3, 2), Activation(), Flatten()), hidden_width=8
    )
    fm = build_forward_model(spec, 5)
    rng = np.random.default_rng(5)
    for v in fm.params.entries.values():
        v += rng.normal(size=v.shape) * 0.05
    obs = rng.random((3, 2, 6, 6))
    next_obs = rng.random((3, 2, 6, 6))
    actions = rng.integers(0, 4, size=3)

    # target features are a constant: freeze them before differentiating
    targets, _ = encode(fm, next_obs)
    targets = targets.copy()

    features, enc_cache = encode(fm, obs, need_cache=True)
    pred, (c1, mask, c2) = predict_next_features(fm, features, actions, need_cache=True)
    batch = 3
    d_pred = (2.0 / batch) * (pred - targets)
    from distilrl.nn import dense_backward, relu_backward, seq_backward

    dh, dw2, db2 = dense_backward(c2, fm.params.entries["pred2.w"], d_pred)
    dh = relu_backward(mask, dh)
    d_joint, dw1, db1 = dense_backward(c1, fm.params.entries["pred1.w"], dh)
    _, enc_grads = seq_backward(fm.params, "enc", spec.encoder_layers, enc_cache, d_joint[:, : fm.feature_dim])
    grads = {"pred1.w": dw1, "pred1.b": db1, "pred2.w": dw2, "pred2.b": db2, **enc_grads}

    def loss_fn(params):
        feats, _ = encode(fm, obs)
        p, _ = predict_next_features(fm, feats, actions)
        return float(((targets - p) ** 2).sum(axis=1).mean())

    fd = central_fd_gradients(loss_fn, fm.params)
    assert max_rel_error(grads, fd) < 1e-4


@pytest.mark.slow
def test_training_reduces_loss_on_fixed_transitions():
    successes = 0
    for seed in range(5):
        fm = build_forward_model(TOY_FM, seed + 10)
        rng = np.random.default_rng(seed)
        obs = rng.random((32, 4, 12, 12))
        actions = rng.integers(0, 4, size=32)
        # next state depends on the action so there is structure to learn
        next_obs = np.clip(obs + actions[:, None, None, None] * 0.05, 0, 1)
        opt = rmsprop_init(fm.params)
        first = None
        losses = []
        for _ in range(100):
            opt, stats = curiosity_update(fm, obs, actions, next_obs, opt, IntrinsicConfig())
            if first is None:
                first = stats.loss_before
            losses.append(stats.loss_before)
        if losses[-1] < first:
            successes += 1
    assert successes >= 4


def test_frozen_encoder_only_trains_predictor():
    fm = build_forward_model(TOY_FM, 20)
    rng = np.random.default_rng(0)
    obs = rng.random((8, 4, 12, 12))
    next_obs = rng.random((8, 4, 12, 12))
    actions = rng.integers(0, 4, size=8)
    enc_before = {k: v.copy() for k, v in fm.params.entries.items() if k.startswith("enc")}
    opt = rmsprop_init(fm.params)
    curiosity_update(fm, obs, actions, next_obs, opt, IntrinsicConfig(train_encoder=False))
    for k, v in enc_before.items():
        assert np.array_equal(fm.params.entries[k], v)
    assert not np.array_equal(fm.params.entries["pred2.w"], np.zeros_like(fm.params.entries["pred2.w"]))
