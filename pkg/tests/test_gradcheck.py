import numpy as np
import pytest

from mcnet.autodiff import inject_sign_fault, mul, reduce_sum, relu, scale, tanh
from mcnet.gradcheck import GradCheckReport, grad_check, relative_error
from mcnet.tensor import Tensor


def _square_sum(g, n):
    return reduce_sum(g, mul(g, n[0], n[0]))


def _tanh_sum(g, n):
    return reduce_sum(g, tanh(g, n[0]))


def test_should_pass_quadratic_at_tight_tolerance():
    theta = np.random.default_rng(3).uniform(0.5, 1.5, size=(1, 2, 3, 3))
    report = grad_check(_square_sum, [Tensor(theta)], tolerance=1e-9)
    assert report.passed, str(report)
    assert report.probes == 18
    assert report.failure is None


def test_should_detect_sign_fault():
    theta = Tensor(np.random.default_rng(3).uniform(-1, 1, size=(1, 1, 3, 3)))
    with inject_sign_fault("tanh"):
        report = grad_check(_tanh_sum, [theta], name="tanh")
    assert not report.passed
    # a flipped sign is a relative error of exactly 2
    assert report.max_rel_error == pytest.approx(2.0, rel=1e-4)
    assert str(report).startswith("FAIL tanh")


def test_should_report_non_finite_probe():
    def builder(g, n):
        # finite only at the checked point itself
        factor = 1.0 if g.array(n[0]).item() == 1.0 else np.inf
        return scale(g, n[0], factor)

    report = grad_check(builder, [Tensor(np.ones((1, 1, 1, 1)))])
    assert not report.passed
    assert "non-finite" in report.failure
    assert "non-finite" in str(report)


@pytest.mark.parametrize("step", [0.0, -1e-5])
def test_should_reject_non_positive_step(step):
    with pytest.raises(ValueError, match="step"):
        grad_check(_square_sum, [Tensor(np.ones((1, 1, 1, 1)))], step=step)


def test_should_subsample_above_max_probes():
    theta = Tensor(np.linspace(0.5, 1.5, 50).reshape(1, 2, 5, 5))
    report = grad_check(_square_sum, [theta], max_probes=7, seed=1)
    assert report.probes == 7
    assert report.passed


def test_should_report_error_per_parameter():
    a = Tensor(np.full((1, 1, 2, 2), 0.5))
    b = Tensor(np.full((1, 1, 2, 2), 0.25))

    def builder(g, n):
        return reduce_sum(g, mul(g, tanh(g, n[0]), n[1]))

    with inject_sign_fault("tanh"):
        report = grad_check(builder, [a, b])
    assert len(report.per_param) == 2
    assert report.per_param[0] > 1.0
    assert report.per_param[1] < 1e-6


@pytest.mark.parametrize(
    "analytic,numeric,expected",
    [
        (2.0, 2.0, 0.0),
        (1.0, -1.0, 2.0),
        (0.0, 0.0, 0.0),
        (1e-9, 0.0, 0.1),
        (4.0, 3.0, 0.25),
    ],
)
def test_should_compute_relative_error(analytic, numeric, expected):
    assert relative_error(analytic, numeric) == pytest.approx(expected)


def _relu_sum(g, n):
    return reduce_sum(g, relu(g, n[0]))


def test_should_fail_element_straddling_relu_kink_by_default():
    # x - h lies below zero
    theta = [Tensor(np.full((1, 1, 1, 1), 3e-6))]
    report = grad_check(_relu_sum, theta, step=1e-5)
    assert not report.passed
    assert report.refined == 0


def test_should_count_elements_recovered_by_refinement():
    theta = [Tensor(np.array([3e-6, 0.5]).reshape(1, 1, 1, 2))]
    report = grad_check(_relu_sum, theta, step=1e-5, refinements=2)
    assert report.passed, str(report)
    assert report.refined == 1
    assert str(report).endswith("2 probes, 1 refined)")


def test_should_pass_relu_away_from_kink_without_refinement():
    theta = [Tensor(np.array([-0.3, 0.2]).reshape(1, 1, 1, 2))]
    report = grad_check(_relu_sum, theta, step=1e-5)
    assert report.passed, str(report)
    assert report.refined == 0


def test_should_format_passing_report():
    report = GradCheckReport("conv2d", 1.5e-9, (1.5e-9,), 1e-4, 12)
    assert report.passed
    text = str(report)
    assert text.startswith("PASS conv2d")
    assert "1.500e-09" in text
    assert "12 probes" in text
