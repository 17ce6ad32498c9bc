import dataclasses

import numpy as np
import pytest

from mcnet.autodiff import Graph, backward, reduce_sum
from mcnet.checks import run_model_check
from mcnet.config import ModelConfig
from mcnet.errors import ShapeError
from mcnet.gradcheck import grad_check
from mcnet.model import (
    BASELINE_COUNT_TOLERANCE,
    Discriminator,
    Generator,
    GeneratorParams,
    build_convlstm_baseline,
    build_discriminator,
    build_generator,
    discriminate,
    encode_content,
    generator_layout,
    predict_frames,
    predict_sequence,
    predict_step,
)
from mcnet.ops import ConvLSTMState
from mcnet.tensor import Tensor


def _frames(config, count, batch=2, seed=0):
    rng = np.random.default_rng(seed)
    return [
        Tensor(rng.uniform(-1, 1, size=(batch,) + config.frame_shape))
        for _ in range(count)
    ]


def test_should_mirror_encoder_in_decoder(tiny_model):
    layout = generator_layout(tiny_model)
    assert len(layout.decoder) == tiny_model.scales
    for level, block in enumerate(layout.decoder):
        assert len(block) == tiny_model.content_convs[level]
        assert all(layer.transposed for layer in block)
        assert block[0].conv.in_channels == tiny_model.content_widths[level]
    assert layout.decoder[0][-1].conv.out_channels == tiny_model.channels
    assert layout.hidden == tiny_model.motion_widths[-1]


def test_should_name_parameters_by_component(tiny_model):
    params = build_generator(tiny_model)
    prefixes = {name.split(".")[0] for name in params}
    assert prefixes == {"content", "motion", "lstm", "residual", "comb", "decoder"}
    assert "content.1.0.weight" in params
    assert "decoder.2.1.bias" in params
    assert params.count() == generator_layout(tiny_model).count()


def test_should_seed_initialization(tiny_model):
    a = build_generator(tiny_model, seed=3)
    b = build_generator(tiny_model, seed=3)
    c = build_generator(tiny_model, seed=4)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()
    assert all(
        float(np.abs(t.data).sum()) == 0.0
        for name, t in a.items()
        if name.endswith(".bias")
    )


def test_should_predict_frames_of_input_shape_in_open_interval(tiny_model):
    params = build_generator(tiny_model)
    g = Graph()
    net = Generator(g, params)
    frames = _frames(tiny_model, 3)
    pred = predict_sequence(net, frames, n_context=3, steps=2)
    assert len(pred.frames) == 2
    for node in pred.frames:
        assert g.shape(node) == (2,) + tiny_model.frame_shape
        values = g.array(node)
        assert np.all(values > -1.0) and np.all(values < 1.0)
    hidden = g.shape(pred.state.hidden)
    assert hidden == (2, generator_layout(tiny_model).hidden, 2, 2)


def test_should_equal_no_residual_model_when_residuals_are_zero(tiny_model):
    params = build_generator(tiny_model, seed=1)
    zeroed = params.updated(
        {
            name: Tensor.zeros(t.shape)
            for name, t in params.items()
            if name.startswith("residual.")
        }
    )
    plain = dataclasses.replace(tiny_model, residual=False)
    without = GeneratorParams(
        plain,
        {name: t for name, t in params.items() if not name.startswith("residual.")},
    )
    clip = np.random.default_rng(2).uniform(-1, 1, size=(3,) + tiny_model.frame_shape)
    a = predict_frames(zeroed, clip, 3, 2)
    b = predict_frames(without, clip, 3, 2)
    assert np.array_equal(a, b)


def test_should_carry_state_between_steps(tiny_model):
    params = build_generator(tiny_model)
    frames = _frames(tiny_model, 3, batch=1)
    g = Graph()
    net = Generator(g, params, trainable=False)
    both = predict_sequence(net, frames, n_context=3, steps=2)

    g2 = Graph()
    net2 = Generator(g2, params, trainable=False)
    first = predict_sequence(net2, frames, n_context=3, steps=1)
    second, _ = predict_step(net2, frames[-1], first.frames[0], first.state)
    assert np.array_equal(g.array(both.frames[1]), g2.array(second))


def test_should_depend_on_recurrent_state(tiny_model):
    params = build_generator(tiny_model)
    frames = _frames(tiny_model, 4, batch=1, seed=5)
    a = predict_frames(params, np.concatenate([f.data for f in frames]), 4, 1)
    g = Graph()
    net = Generator(g, params, trainable=False)
    hidden = generator_layout(tiny_model).hidden
    cold = ConvLSTMState.zeros(g, (1, hidden, 2, 2))
    b, _ = predict_step(net, frames[2], frames[3], cold)
    # a prediction without the warm-up differences sees a different state
    assert not np.array_equal(a[0], g.array(b)[0])


def test_should_build_baseline_of_similar_size():
    config = ModelConfig()
    base = build_convlstm_baseline(config)
    reference = build_generator(config).count()
    assert abs(base.count() - reference) / reference < BASELINE_COUNT_TOLERANCE
    assert base.config.kind == "convlstm"
    assert not any(name.startswith("content.") for name in base)


def test_should_predict_with_baseline(tiny_model):
    base = build_convlstm_baseline(tiny_model)
    clip = np.random.default_rng(0).uniform(-1, 1, size=(3,) + tiny_model.frame_shape)
    out = predict_frames(base, clip, 3, 2)
    assert out.shape == (2,) + tiny_model.frame_shape
    assert np.all(np.abs(out) < 1.0)


def test_should_have_no_content_encoder_in_baseline(tiny_model):
    base = build_convlstm_baseline(tiny_model)
    g = Graph()
    net = Generator(g, base)
    with pytest.raises(ValueError, match="content encoder"):
        encode_content(net, _frames(tiny_model, 1)[0])


@pytest.mark.parametrize(
    "n_context,steps,count",
    [(1, 1, 3), (2, 0, 3), (4, 1, 3)],
)
def test_should_reject_invalid_prediction_request(tiny_model, n_context, steps, count):
    g = Graph()
    net = Generator(g, build_generator(tiny_model))
    with pytest.raises(ValueError):
        predict_sequence(net, _frames(tiny_model, count), n_context, steps)


def test_should_reject_frame_of_wrong_shape(tiny_model):
    g = Graph()
    net = Generator(g, build_generator(tiny_model))
    wrong = [Tensor(np.zeros((1, 1, 8, 8)))] * 2
    with pytest.raises(ShapeError, match="frame shape"):
        predict_sequence(net, wrong, 2, 1)


def test_should_reject_parameters_of_other_config(tiny_model):
    params = build_generator(tiny_model)
    other = dataclasses.replace(tiny_model, comb_widths=(4, 8))
    with pytest.raises(ShapeError):
        GeneratorParams(other, dict(params))


def test_should_score_sequences_as_probabilities(tiny_model):
    params = build_discriminator(tiny_model, n_frames=3)
    assert params.n_frames == 3
    assert params["disc.0.weight"].shape == (4, 3, 3, 3)
    g = Graph()
    net = Discriminator(g, params)
    frames = _frames(tiny_model, 3)
    prob = discriminate(net, frames[:2], frames[2:])
    assert g.shape(prob) == (2, 1, 1, 1)
    values = g.array(prob)
    assert np.all(values > 0.0) and np.all(values < 1.0)


def test_should_reject_wrong_number_of_discriminator_frames(tiny_model):
    g = Graph()
    net = Discriminator(g, build_discriminator(tiny_model, n_frames=3))
    frames = _frames(tiny_model, 2)
    with pytest.raises(ShapeError, match="stacked channels"):
        discriminate(net, frames[:1], frames[1:])


def test_should_seed_discriminator(tiny_model):
    a = build_discriminator(tiny_model, 3, seed=0)
    b = build_discriminator(tiny_model, 3, seed=0)
    assert a.checksum() == b.checksum()
    assert build_discriminator(tiny_model, 3, seed=1).checksum() != a.checksum()


def test_should_pass_gradient_check_through_discriminator(tiny_model):
    params = build_discriminator(tiny_model, n_frames=3)
    frames = _frames(tiny_model, 2, batch=1)
    rng = np.random.default_rng(8)
    candidate = rng.uniform(-1, 1, size=(1,) + tiny_model.frame_shape)

    def builder(g, n):
        net = Discriminator(g, params, trainable=False)
        return reduce_sum(g, discriminate(net, frames, [n[0]]))

    report = grad_check(builder, [Tensor(candidate)], max_probes=64, refinements=2)
    assert report.passed, str(report)


def test_should_collect_gradients_of_every_parameter(tiny_model):
    params = build_generator(tiny_model)
    g = Graph()
    net = Generator(g, params)
    frames = _frames(tiny_model, 3)
    pred = predict_sequence(net, frames, n_context=2, steps=1)
    backward(g, reduce_sum(g, pred.frames[0]))
    grads = net.gradients()
    assert list(grads) == list(params)
    assert all(grads[name].shape == params[name].shape for name in params)
    assert float(np.abs(grads["lstm.weight"]).sum()) > 0.0


@pytest.mark.parametrize("steps", [1, 2])
def test_should_pass_gradient_check_through_generator(steps):
    report = run_model_check(probes=60, steps=steps)
    assert report.passed, str(report)
    assert report.probes == 60
