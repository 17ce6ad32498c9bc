import numpy as np
import pytest

from mcnet.errors import NonFiniteError, ShapeError
from mcnet.optim import OptimizerState, adam_step
from mcnet.params import ParameterSet
from mcnet.tensor import Tensor


@pytest.fixture
def params():
    return ParameterSet({"w": Tensor.full((1, 1, 2, 2), 0.5)})


def test_should_move_against_gradient_by_learning_rate(params):
    grads = {"w": np.array([1.0, -2.0, 0.5, -0.1]).reshape(1, 1, 2, 2)}
    new, state = adam_step(params, grads, OptimizerState.zeros(params), 0.01)
    # the first bias-corrected step has magnitude lr for every element
    delta = new["w"].data - params["w"].data
    assert np.allclose(delta, -0.01 * np.sign(grads["w"]), rtol=1e-6)
    assert state.step == 1


def test_should_keep_inputs_unchanged(params):
    state = OptimizerState.zeros(params)
    before = params["w"].data.copy()
    adam_step(params, {"w": np.ones((1, 1, 2, 2))}, state, 0.1)
    assert np.array_equal(params["w"].data, before)
    assert state.step == 0
    assert float(state.first["w"].data.sum()) == 0.0


def test_should_follow_adam_recurrence(params):
    state = OptimizerState.zeros(params)
    grads = [np.full((1, 1, 2, 2), g) for g in (1.0, 3.0)]
    current = params
    for grad in grads:
        current, state = adam_step(current, {"w": grad}, state, 0.1)

    m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0
    m_hat = m / (1 - 0.9**2)
    v_hat = v / (1 - 0.999**2)
    first_step = 0.1 * 1.0 / (1.0 + 1e-8)
    expected = 0.5 - first_step - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.allclose(current["w"].data, expected, rtol=1e-10)
    assert state.step == 2
    assert np.allclose(state.first["w"].data, m)
    assert np.allclose(state.second["w"].data, v)


def test_should_reject_non_finite_gradient(params):
    grads = {"w": np.array([1.0, np.nan, 0.0, 0.0]).reshape(1, 1, 2, 2)}
    with pytest.raises(NonFiniteError, match="'w'"):
        adam_step(params, grads, OptimizerState.zeros(params), 0.1)


def test_should_reject_gradient_of_wrong_shape(params):
    with pytest.raises(ShapeError):
        adam_step(
            params, {"w": np.ones((1, 1, 1, 4))}, OptimizerState.zeros(params), 0.1
        )


def test_should_need_gradient_for_every_parameter(params):
    with pytest.raises(KeyError):
        adam_step(params, {}, OptimizerState.zeros(params), 0.1)


def test_should_match_state_to_parameters(params):
    state = OptimizerState.zeros(params)
    assert state.matches(params)
    other = ParameterSet({"w": Tensor.zeros((1, 1, 3, 3))})
    assert not state.matches(other)
