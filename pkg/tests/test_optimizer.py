import numpy as np
import pytest

from autodiff import Tensor
from errors import FrozenModelError, NumericalError
from optimizer import Adam


def test_first_step_moves_by_the_learning_rate():
    w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    w.grad = np.array([0.5, -3.0])
    opt.step()
    # el primer paso corregido vale lr · sign(g)
    np.testing.assert_allclose(w.data, [0.9, -1.9], atol=1e-6)
    assert opt.state.step == 1


def test_l2_adds_weight_decay_to_the_gradient():
    w = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1, l2=1.0)
    w.grad = np.array([0.0])
    opt.step()
    np.testing.assert_allclose(w.data, [1.9], atol=1e-6)


def test_minimizes_a_quadratic():
    w = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        w.grad = 2.0 * w.data
        opt.step()
    np.testing.assert_allclose(w.data, [0.0, 0.0], atol=5e-2)


def test_parameters_without_gradient_are_skipped():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"a": a, "b": b}, lr=0.1)
    a.grad = np.array([1.0])
    opt.step()
    assert b.data[0] == 1.0
    assert a.data[0] != 1.0


def test_non_finite_gradient_raises():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"w": w})
    w.grad = np.array([np.nan])
    with pytest.raises(NumericalError):
        opt.step()


def test_frozen_parameters_are_rejected():
    w = Tensor(np.array([1.0]), requires_grad=False)
    with pytest.raises(FrozenModelError):
        Adam({"w": w})


def test_state_tensors_roundtrip():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    w.grad = np.array([1.0, 1.0])
    opt.step()
    other = Adam({"w": Tensor(np.array([1.0, 2.0]), requires_grad=True)})
    other.state.load_tensors(opt.state.to_tensors())
    np.testing.assert_array_equal(other.state.m["w"], opt.state.m["w"])
    np.testing.assert_array_equal(other.state.v["w"], opt.state.v["w"])


def test_non_finite_gradient_leaves_every_parameter_untouched():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0]), requires_grad=True)
    opt = Adam({"a": a, "b": b}, lr=0.1)
    a.grad = np.array([0.5, 0.5])
    b.grad = np.array([np.inf])
    with pytest.raises(NumericalError) as info:
        opt.step()
    assert info.value.details["tensor"] == "b"
    np.testing.assert_array_equal(a.data, [1.0, 2.0])
    np.testing.assert_array_equal(opt.state.m["a"], [0.0, 0.0])
    assert opt.state.step == 0
