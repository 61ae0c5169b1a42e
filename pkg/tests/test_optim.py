import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distilrl.errors import ContractError
from distilrl.nn import GradientStore, ParameterStore
from distilrl.optim import clip_global_norm, global_norm, rmsprop_init, rmsprop_step


def _store(**arrays):
    return ParameterStore({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}, 0)


def _grads(**arrays):
    return GradientStore({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def test_clip_noop_below_threshold():
    g = _grads(a=[0.3])
    clipped, norm = clip_global_norm(g, 0.5)
    assert clipped is g
    assert norm == pytest.approx(0.3)


def test_clip_scales_to_max_norm():
    g = _grads(a=[3.0], b=[4.0])
    clipped, norm = clip_global_norm(g, 0.5)
    assert norm == pytest.approx(5.0)
    assert clipped.entries["a"][0] == pytest.approx(0.3)
    assert clipped.entries["b"][0] == pytest.approx(0.4)


def test_clip_zero_gradients_unchanged():
    g = _grads(a=[0.0, 0.0])
    clipped, norm = clip_global_norm(g, 0.5)
    assert norm == 0.0
    assert np.array_equal(clipped.entries["a"], [0.0, 0.0])


@settings(max_examples=100)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=10), st.floats(0.01, 10))
def test_clip_norm_bound_and_direction(values, max_norm):
    g = _grads(a=values)
    clipped, norm = clip_global_norm(g, max_norm)
    assert global_norm(clipped) <= max_norm + 1e-12 or norm <= max_norm
    if norm > 0:
        # direction preserved: clipped is a nonnegative scalar multiple
        ratio = clipped.entries["a"] * norm
        assert np.allclose(ratio, np.asarray(values) * min(norm, max_norm), atol=1e-9)


def test_rmsprop_hand_computed_step():
    params = _store(w=[0.0])
    state = rmsprop_init(params, lr=7e-4, alpha=0.99, eps=1e-5)
    new_params, new_state = rmsprop_step(state, params, _grads(w=[1.0]))
    assert new_state.squared_avg["w"][0] == pytest.approx(0.01, abs=1e-15)
    expected = -7e-4 / (np.sqrt(0.01) + 1e-5)
    assert new_params.entries["w"][0] == pytest.approx(expected, abs=1e-12)
    assert new_params.entries["w"][0] == pytest.approx(-6.99930e-3, abs=1e-7)


def test_rmsprop_zero_gradient_is_identity():
    params = _store(w=[1.5, -2.0])
    state = rmsprop_init(params)
    new_params, new_state = rmsprop_step(state, params, _grads(w=[0.0, 0.0]))
    assert np.array_equal(new_params.entries["w"], params.entries["w"])
    assert np.array_equal(new_state.squared_avg["w"], state.squared_avg["w"])


def test_rmsprop_is_pure_function_of_inputs():
    params = _store(w=[0.25])
    state = rmsprop_init(params)
    g = _grads(w=[0.7])
    out1 = rmsprop_step(state, params, g)
    out2 = rmsprop_step(state, params, g)
    assert np.array_equal(out1[0].entries["w"], out2[0].entries["w"])
    assert np.array_equal(out1[1].squared_avg["w"], out2[1].squared_avg["w"])
    # inputs untouched
    assert params.entries["w"][0] == 0.25
    assert state.squared_avg["w"][0] == 0.0


def test_rmsprop_key_mismatch_rejected():
    params = _store(w=[0.0])
    state = rmsprop_init(params)
    with pytest.raises(ContractError):
        rmsprop_step(state, params, _grads(v=[1.0]))


def test_rmsprop_alpha_validation():
    with pytest.raises(ContractError):
        rmsprop_init(_store(w=[0.0]), alpha=1.5)


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_rmsprop_squared_avg_nonnegative(gs):
    params = _store(w=np.zeros(len(gs)))
    state = rmsprop_init(params)
    for _ in range(3):
        params, state = rmsprop_step(state, params, _grads(w=gs))
    assert np.all(state.squared_avg["w"] >= 0)
