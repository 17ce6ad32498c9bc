import numpy as np
import pytest

from mcnet.autodiff import Graph, backward
from mcnet.config import LossConfig
from mcnet.errors import ConfigError
from mcnet.gradcheck import grad_check
from mcnet.objectives import (
    LOG_EPS,
    combine,
    loss_disc,
    loss_gan,
    loss_gdl,
    loss_img,
    loss_p,
    loss_total,
)
from mcnet.tensor import Tensor


def _frames(g, *arrays):
    return [g.constant(np.asarray(a, dtype=float).reshape(1, 1, 2, 2)) for a in arrays]


def _value(g, node):
    return g.array(node).item()


def test_should_give_zero_image_loss_for_identical_frames():
    rng = np.random.default_rng(0)
    g = Graph()
    y = [g.constant(rng.uniform(-1, 1, size=(2, 1, 4, 4))) for _ in range(2)]
    assert _value(g, loss_img(g, y, y, LossConfig())) == 0.0


def naive_image_losses(targets, preds, p, lam):
    pixel = gradient = 0.0
    for y, z in zip(targets, preds):
        n, c, h, w = y.shape
        for b in range(n):
            for k in range(c):
                for i in range(h):
                    for j in range(w):
                        pixel += abs(y[b, k, i, j] - z[b, k, i, j]) ** p
                        if i + 1 < h:
                            dy = abs(y[b, k, i + 1, j] - y[b, k, i, j])
                            dz = abs(z[b, k, i + 1, j] - z[b, k, i, j])
                            gradient += abs(dy - dz) ** lam
                        if j + 1 < w:
                            dy = abs(y[b, k, i, j + 1] - y[b, k, i, j])
                            dz = abs(z[b, k, i, j + 1] - z[b, k, i, j])
                            gradient += abs(dy - dz) ** lam
    return pixel, gradient


@pytest.mark.parametrize("instance", range(50))
def test_should_match_naive_image_losses(instance):
    rng = np.random.default_rng(2000 + instance)
    steps = int(rng.integers(1, 4))
    n, c = rng.integers(1, 3, size=2)
    h, w = rng.integers(2, 7, size=2)
    shape = (int(n), int(c), int(h), int(w))
    targets = [rng.uniform(-1, 1, size=shape) for _ in range(steps)]
    preds = [rng.uniform(-1, 1, size=shape) for _ in range(steps)]
    p = lam = float(1 + instance % 2)
    pixel, gradient = naive_image_losses(targets, preds, p, lam)

    g = Graph()
    ys = [g.constant(y) for y in targets]
    zs = [g.constant(z) for z in preds]
    assert _value(g, loss_p(g, ys, zs, p)) == pytest.approx(pixel, rel=1e-12)
    assert _value(g, loss_gdl(g, ys, zs, lam)) == pytest.approx(gradient, rel=1e-12)


def test_should_sum_powered_pixel_differences():
    g = Graph()
    (y,) = _frames(g, [1.0, -1.0, 0.5, 0.0])
    (z,) = _frames(g, [0.0, 1.0, 0.5, 0.0])
    assert _value(g, loss_p(g, [y], [z], 2.0)) == 5.0
    assert _value(g, loss_p(g, [y], [z], 1.0)) == 3.0


def test_should_compare_neighbour_difference_magnitudes():
    g = Graph()
    (y,) = _frames(g, [[0.0, 1.0], [0.0, 1.0]])
    (z,) = _frames(g, np.zeros((2, 2)))
    # two column differences of magnitude one, none along rows
    assert _value(g, loss_gdl(g, [y], [z], 1.0)) == 2.0
    assert _value(g, loss_gdl(g, [z], [y], 1.0)) == 2.0


def test_should_ignore_sign_of_edges_in_gdl():
    g = Graph()
    (y,) = _frames(g, [[0.0, 1.0], [0.0, 1.0]])
    (z,) = _frames(g, [[1.0, 0.0], [1.0, 0.0]])
    assert _value(g, loss_gdl(g, [y], [z], 1.0)) == 0.0


def test_should_be_symmetric_in_gdl():
    rng = np.random.default_rng(4)
    g = Graph()
    y = [g.constant(rng.uniform(-1, 1, size=(1, 1, 5, 5)))]
    z = [g.constant(rng.uniform(-1, 1, size=(1, 1, 5, 5)))]
    a = _value(g, loss_gdl(g, y, z, 2.0))
    b = _value(g, loss_gdl(g, z, y, 2.0))
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("normalization,expected", [("mean", 1.0), ("sum", 4.0)])
def test_should_normalize_image_loss(normalization, expected):
    g = Graph()
    y, z = _frames(g, np.ones(4), np.zeros(4))
    cfg = LossConfig(normalization=normalization)
    assert _value(g, loss_img(g, [y], [z], cfg)) == expected


def test_should_reject_mismatched_frame_lists():
    g = Graph()
    y, z = _frames(g, np.ones(4), np.zeros(4))
    with pytest.raises(ValueError, match="target frames"):
        loss_p(g, [y, y], [z])
    with pytest.raises(ValueError, match="at least one"):
        loss_gdl(g, [], [])


def test_should_give_log_two_for_undecided_discriminator():
    g = Graph()
    half = g.constant(np.full((3, 1, 1, 1), 0.5))
    assert _value(g, loss_gan(g, half)) == pytest.approx(0.693147, abs=1e-6)
    assert _value(g, loss_disc(g, half, half)) == pytest.approx(1.386294, abs=1e-6)


@pytest.mark.parametrize("prob", [0.0, 1.0])
def test_should_clamp_saturated_probabilities(prob):
    g = Graph()
    p = g.parameter(Tensor(np.full((2, 1, 1, 1), prob)))
    gan = loss_gan(g, p)
    disc = loss_disc(g, p, p)
    assert np.isfinite(_value(g, gan))
    assert np.isfinite(_value(g, disc))
    assert _value(g, gan) <= -np.log(LOG_EPS) + 1e-9
    backward(g, disc)
    assert np.all(np.isfinite(g.grad_array(p)))


def test_should_drop_adversarial_term_without_beta():
    g = Graph()
    y, z = _frames(g, np.ones(4), np.zeros(4))
    cfg = LossConfig(alpha=2.0, beta=0.0)
    img = loss_img(g, [y], [z], cfg)
    nodes = len(g)
    total = combine(g, img, None, cfg)
    assert _value(g, total) == 2.0 * _value(g, img)
    assert len(g) == nodes + 1


def test_should_need_adversarial_term_with_beta():
    g = Graph()
    y, z = _frames(g, np.ones(4), np.zeros(4))
    img = loss_img(g, [y], [z], LossConfig())
    with pytest.raises(ValueError, match="beta"):
        combine(g, img, None, LossConfig(beta=0.5))


def test_should_weight_total_loss():
    g = Graph()
    y, z = _frames(g, np.ones(4), np.zeros(4))
    half = g.constant(np.full((2, 1, 1, 1), 0.5))
    cfg = LossConfig(alpha=1.0, beta=0.5)
    total = loss_total(g, [y], [z], half, cfg)
    assert _value(g, total) == pytest.approx(1.0 + 0.5 * np.log(2.0), rel=1e-6)
    plain = loss_total(g, [y], [z], None, LossConfig(beta=0.0))
    assert _value(g, plain) == 1.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(alpha=-1.0),
        dict(beta=-0.1),
        dict(p=0.5),
        dict(lam=0.0),
        dict(normalization="median"),
    ],
)
def test_should_reject_invalid_loss_config(kwargs):
    with pytest.raises(ConfigError):
        LossConfig(**kwargs)


def test_should_differentiate_image_loss_by_prediction():
    rng = np.random.default_rng(9)
    target = rng.uniform(-1, 1, size=(2, 1, 4, 4))
    pred = target + rng.uniform(0.05, 0.3, size=target.shape) * rng.choice(
        [-1.0, 1.0], size=target.shape
    )

    def builder(g, n):
        return loss_img(g, [Tensor(target)], [n[0]], LossConfig(p=2.0, lam=2.0))

    report = grad_check(builder, [Tensor(pred)])
    assert report.passed, str(report)
