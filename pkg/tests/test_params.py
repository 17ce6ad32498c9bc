import numpy as np
import pytest

from mcnet.autodiff import Graph
from mcnet.errors import ShapeError
from mcnet.params import ParameterSet, glorot_uniform
from mcnet.tensor import Tensor


@pytest.fixture
def params():
    return ParameterSet(
        {
            "conv.w": Tensor.ones((2, 1, 3, 3)),
            "conv.b": Tensor.zeros((1, 2, 1, 1)),
        }
    )


def test_should_count_scalars(params):
    assert params.count() == 20
    assert len(params) == 2
    assert list(params) == ["conv.w", "conv.b"]
    assert repr(params) == "ParameterSet(2 tensors, 20 values)"


def test_should_return_new_set_on_update(params):
    new = params.updated({"conv.b": Tensor.ones((1, 2, 1, 1))})
    assert new is not params
    assert float(params["conv.b"].data.sum()) == 0.0
    assert float(new["conv.b"].data.sum()) == 2.0
    assert new["conv.w"] is params["conv.w"]


def test_should_reject_unknown_name_on_update(params):
    with pytest.raises(KeyError, match="unknown"):
        params.updated({"other": Tensor.zeros((1, 1, 1, 1))})


def test_should_not_support_item_assignment(params):
    with pytest.raises(TypeError):
        params["conv.w"] = Tensor.zeros((2, 1, 3, 3))


def test_should_change_checksum_with_values(params):
    same = ParameterSet(dict(params))
    other = params.updated({"conv.w": Tensor.full((2, 1, 3, 3), 1.5)})
    assert params.checksum() == same.checksum()
    assert params.checksum() != other.checksum()
    assert len(params.checksum()) == 64


def test_should_bind_as_parameters_or_constants(params):
    g = Graph()
    trainable = params.bind(g)
    frozen = params.bind(g, trainable=False)
    assert all(g.requires_grad(n) for n in trainable.values())
    assert not any(g.requires_grad(n) for n in frozen.values())
    assert np.array_equal(g.array(trainable["conv.w"]), params["conv.w"].data)


def test_should_detect_non_finite_values(params):
    assert params.is_finite()
    bad = params.updated({"conv.b": Tensor.full((1, 2, 1, 1), np.nan)})
    assert not bad.is_finite()


def test_should_give_zeros_with_same_shapes(params):
    zeros = params.zeros_like()
    assert {k: v.shape for k, v in zeros.items()} == params.shapes()
    assert all(float(np.abs(v.data).sum()) == 0.0 for v in zeros.values())


def test_should_stay_within_glorot_bound():
    rng = np.random.default_rng(1)
    t = glorot_uniform(rng, (8, 4, 3, 3), fan_in=36, fan_out=72)
    bound = np.sqrt(6.0 / 108)
    assert t.shape == (8, 4, 3, 3)
    assert np.all(np.abs(t.data) <= bound)
    # a few hundred draws fill most of the interval
    assert np.max(np.abs(t.data)) > 0.9 * bound


def test_should_reject_tensor_that_is_not_4d():
    with pytest.raises(ShapeError, match="4-D"):
        ParameterSet({"w": np.zeros((2, 2))})
