import math

import numpy as np
import pytest

import autodiff as ad
from autodiff import Tensor
from errors import ConfigError, GQSTNError, NumericalError, ShapeError


def test_add_mul_gradients_with_broadcast():
    a = Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), requires_grad=True)
    b = Tensor(np.array([10.0, 20.0, 30.0]), requires_grad=True)
    out = ad.sum(a * b + a)
    out.backward()
    np.testing.assert_allclose(a.grad, np.array([[11.0, 21.0, 31.0], [11.0, 21.0, 31.0]]))
    np.testing.assert_allclose(b.grad, np.array([5.0, 7.0, 9.0]))


def test_backward_accumulates_until_zero_grad():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    ad.sum(x * x).backward()
    ad.sum(x * x).backward()
    np.testing.assert_allclose(x.grad, np.array([8.0, -4.0]))
    x.zero_grad()
    ad.sum(x * 3.0).backward()
    np.testing.assert_allclose(x.grad, np.array([3.0, 3.0]))


def test_shared_subexpression_gradient():
    x = Tensor(3.0, requires_grad=True)
    y = x * x
    (y + y * x).backward()
    # d/dx (x² + x³) = 2x + 3x²
    assert float(x.grad) == pytest.approx(2 * 3.0 + 3 * 9.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.sum(x * 2.0)
    assert not y.requires_grad
    assert ad.is_grad_enabled()


def test_backward_requires_scalar_root():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_backward_without_graph_raises():
    with pytest.raises(GQSTNError):
        Tensor(1.0).backward()


def test_item_rejects_non_scalar():
    assert Tensor([4.5]).item() == 4.5
    with pytest.raises(ShapeError):
        Tensor(np.zeros(3)).item()


def test_incompatible_shapes_raise_shape_error():
    with pytest.raises(ShapeError):
        ad.add(np.zeros((2, 3)), np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        ad.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        ad.conv2d(np.zeros((1, 2, 5, 5)), np.zeros((3, 1, 3, 3)))


def test_log_and_atan2_poles_stay_finite():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    ad.sum(ad.log(x)).backward()
    assert np.all(np.isfinite(x.grad))
    y, z = Tensor(0.0, requires_grad=True), Tensor(0.0, requires_grad=True)
    out = ad.atan2(y, z)
    out.backward()
    assert out.item() == 0.0
    assert y.grad == 0.0 and z.grad == 0.0


def test_sigmoid_is_exact_at_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_bce_with_logits_at_zero_is_log_two():
    loss = ad.binary_cross_entropy_with_logits(np.zeros(4), np.ones(4))
    assert loss.item() == pytest.approx(math.log(2.0))


def test_conv2d_same_padding_shapes():
    x = np.zeros((2, 1, 96, 96))
    w = np.zeros((8, 1, 3, 3))
    assert ad.conv2d(x, w, np.zeros(8), stride=2, padding="same").shape == (2, 8, 48, 48)
    assert ad.conv2d(x, w, None, stride=1, padding="valid").shape == (2, 8, 94, 94)


def test_conv2d_matches_direct_correlation():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 1, 4, 4))
    w = rng.normal(size=(1, 1, 3, 3))
    out = ad.conv2d(x, w).data
    expected = np.array([[np.sum(x[0, 0, i:i + 3, j:j + 3] * w[0, 0]) for j in range(2)] for i in range(2)])
    np.testing.assert_allclose(out[0, 0], expected)


def test_max_pool_gradient_goes_to_first_maximum():
    x = Tensor(np.array([[[[1.0, 1.0], [0.0, 0.5]]]]), requires_grad=True)
    ad.sum(ad.max_pool2d(x, 2)).backward()
    np.testing.assert_array_equal(x.grad, np.array([[[[1.0, 0.0], [0.0, 0.0]]]]))


def test_graph_records_are_topological():
    x = Tensor(np.ones(2), requires_grad=True)
    y = ad.exp(x)
    z = ad.sum(y * x)
    records = ad.Graph.from_root(z).records()
    position = {r.node_id: i for i, r in enumerate(records)}
    for record in records:
        for parent in record.input_ids:
            if parent in position:
                assert position[parent] < position[record.node_id]


@pytest.mark.parametrize("op", [ad.tanh, ad.sin, ad.cos, ad.exp, ad.sigmoid])
def test_grad_check_unary_ops(op):
    x = np.random.default_rng(1).normal(size=(2, 3))
    report = ad.grad_check(lambda t: ad.sum(op(t) * np.arange(6.0).reshape(2, 3)), x, eps=1e-6)
    assert report.passed, report.to_dict()


def test_grad_check_softmax_and_matmul():
    rng = np.random.default_rng(2)
    other = rng.normal(size=(3, 2))
    weights = rng.normal(size=(4, 2))
    report = ad.grad_check(lambda t: ad.sum(ad.softmax(ad.matmul(t, other)) * weights),
                           rng.normal(size=(4, 3)), eps=1e-6)
    assert report.passed


def test_grad_check_detects_a_wrong_gradient():
    def wrong_square(x):
        x = ad.as_tensor(x)
        return ad._make(x.data ** 2, (x,), lambda g: (g * x.data,), "wrong_square")

    report = ad.grad_check(lambda t: ad.sum(wrong_square(t)), np.array([0.2, 3.0]), eps=1e-6)
    assert not report.passed
    assert report.worst_index == (1,)


def test_grad_check_rejects_nondeterministic_function():
    rng = np.random.default_rng(0)
    with pytest.raises(NumericalError):
        ad.grad_check(lambda t: ad.sum(t * rng.normal()), np.ones(2))


def test_unknown_dtype_is_a_config_error():
    with pytest.raises(ConfigError):
        ad.set_default_dtype("float16")


def test_one_sided_grad_check_tolerates_a_kink_inside_eps():
    x = np.array([1e-7, -0.5])
    central = ad.grad_check(lambda t: ad.sum(ad.relu(t)), x, eps=1e-6)
    sided = ad.grad_check(lambda t: ad.sum(ad.relu(t)), x, eps=1e-6, one_sided=True)
    assert not central.passed
    assert sided.passed


def test_one_sided_grad_check_still_catches_wrong_gradients():
    def half_relu(x):
        x = ad.as_tensor(x)
        return ad._make(np.maximum(x.data, 0.0), (x,), lambda g: (0.5 * g * (x.data > 0),), "half_relu")

    report = ad.grad_check(lambda t: ad.sum(half_relu(t)), np.array([0.3, 1.2]), eps=1e-6, one_sided=True)
    assert not report.passed


def test_one_sided_grad_check_uses_the_side_without_the_kink():
    # gradiente que promedia las dos pendientes cerca del codo: coincide con la diferencia central
    def blurred_relu(x):
        x = ad.as_tensor(x)
        slope = np.where(np.abs(x.data) < 1e-6, 0.55, (x.data > 0).astype(float))
        return ad._make(np.maximum(x.data, 0.0), (x,), lambda g: (g * slope,), "blurred_relu")

    x = np.array([1e-7])
    assert ad.grad_check(lambda t: ad.sum(blurred_relu(t)), x, eps=1e-6).passed
    assert not ad.grad_check(lambda t: ad.sum(blurred_relu(t)), x, eps=1e-6, one_sided=True).passed


def test_one_sided_grad_check_on_a_smooth_function_matches_central():
    x = np.array([0.3, -1.1, 2.0])
    report = ad.grad_check(lambda t: ad.sum(ad.sin(t) * ad.exp(t)), x, one_sided=True)
    assert report.passed
    assert report.max_rel_err < 1e-7
