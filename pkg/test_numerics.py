"""Tests for the autodiff tensor core."""
import math

import numpy as np
import pytest

from laneattn.errors import DomainError, ShapeError
from laneattn.numerics import (Tensor, backward, concat, elementwise, finite_diff_check, leaves, linearized,
                               matmul, numeric_gradient, softmax)


def test_matmul_identity_and_projection():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(eye, m).data, [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[5.0], [7.0]])).data,
                                  [[5.0], [0.0]])


def test_matmul_matches_triple_loop(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected, rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_broadcast_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(2))


def test_elementwise_values():
    assert elementwise(Tensor(0.0), "sigmoid").item() == 0.5
    assert elementwise(Tensor(0.0), "tanh").item() == 0.0
    assert elementwise(Tensor(-3.0), "relu").item() == 0.0
    with pytest.raises(DomainError):
        elementwise(Tensor(1.0), "softplus")


def test_sigmoid_gradient_matches_central_difference():
    x = Tensor(1.5, requires_grad=True)
    y = x.sigmoid()
    backward(y)
    h = 1e-5
    s = lambda v: 1.0 / (1.0 + math.exp(-v))
    numeric = (s(1.5 + h) - s(1.5 - h)) / (2 * h)
    assert abs(x.grad - numeric) / abs(numeric) < 1e-7


def test_softmax_cases():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_array_equal(softmax(Tensor([42.0])).data, [1.0])
    w = softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(w))
    assert w[0] == pytest.approx(1.0)
    assert w[1] == pytest.approx(0.0, abs=1e-300)
    with pytest.raises(DomainError):
        softmax(Tensor(np.zeros(0)))


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_backward_sum_of_matrix_vector(rng):
    A = rng.normal(size=(3, 4))
    x = Tensor(rng.normal(size=4), requires_grad=True)
    backward((Tensor(A) @ x).sum())
    np.testing.assert_allclose(x.grad, A.sum(axis=0), atol=1e-12)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(DomainError):
        backward(x * 2.0)


def test_shared_node_accumulates():
    x = Tensor(2.0, requires_grad=True)
    y = x * 3.0
    backward(y * y + y)
    # d/dx (9x^2 + 3x) = 18x + 3
    assert x.grad == pytest.approx(39.0)


def test_backward_deep_chain_no_recursion_limit():
    x = Tensor(1.0, requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    backward(y)
    assert x.grad == pytest.approx(1.0)


def test_grads_by_name_and_unreached_leaves():
    P = leaves({"a": np.array([1.0, 2.0]), "b": np.array(3.0)})
    grads = backward((P["a"] * P["a"]).sum(), P)
    np.testing.assert_allclose(grads["a"], [2.0, 4.0])
    np.testing.assert_array_equal(grads["b"], 0.0)


def test_bias_broadcast_gradient(rng):
    X = Tensor(rng.normal(size=(3, 2)))
    b = Tensor(np.zeros(2), requires_grad=True)
    backward((X + b).sum())
    np.testing.assert_allclose(b.grad, [3.0, 3.0])


def test_indexing_and_concat_gradients():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    y = concat([x[0:2], x[2:3] * 2.0], axis=0)
    backward((y * y).sum())
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 24.0])


def test_fancy_index_accumulates_repeats():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(x[np.array([0, 0, 1])].sum())
    np.testing.assert_allclose(x.grad, [2.0, 1.0])


def test_log_and_pow_domain():
    with pytest.raises(DomainError):
        Tensor([1.0, 0.0]).log()
    with pytest.raises(DomainError):
        Tensor(0.0) ** -1.0


def test_exp_is_clamped():
    assert np.isfinite(Tensor(1000.0).exp().item())
    assert Tensor(-1000.0).exp().item() == pytest.approx(math.exp(-30.0))


def test_linearized_applies_jacobian():
    x = Tensor([1.0, 2.0], requires_grad=True)
    jac = np.array([[2.0, 0.0], [1.0, 3.0]])
    y = linearized(jac @ x.data, x, jac)
    backward(y.sum())
    np.testing.assert_allclose(x.grad, jac.sum(axis=0))
    with pytest.raises(ShapeError):
        linearized(np.zeros(3), x, jac)


def test_finite_diff_check_square():
    errors = finite_diff_check(lambda P: P["p"] * P["p"], {"p": np.array(2.0)}, h=1e-5)
    assert errors["max"] < 1e-9


def test_finite_diff_check_sigmoid():
    errors = finite_diff_check(lambda P: P["p"].sigmoid(), {"p": np.array(0.3)}, h=1e-5)
    assert errors["max"] < 1e-7


def test_finite_diff_check_reports_broken_gradient():
    def f(P):
        # relu kink straddled by the step: analytic 0, central 0.5
        return P["p"].relu()
    errors = finite_diff_check(f, {"p": np.array(0.0)}, h=1e-5)
    assert errors["p"] > 0.1


def test_finite_diff_check_subsamples(rng):
    A = rng.normal(size=(6, 6))
    errors = finite_diff_check(lambda P: ((Tensor(A) @ P["w"]).tanh()).sum(), {"w": rng.normal(size=(6, 3))},
                               max_entries=5)
    assert errors["w"] < 1e-7


def test_finite_diff_check_flags_detached_coordinate():
    def f(P):
        w = P["w"]
        # w[1] enters as a constant, so backward() sees no path to it
        return w[0] * 1000.0 + Tensor(w.data[1]) * 1e-3
    errors = finite_diff_check(f, {"w": np.array([0.5, 2.0])}, h=1e-5)
    assert errors["w"] == pytest.approx(1.0, abs=1e-6)


def test_finite_diff_check_names_filter():
    errors = finite_diff_check(lambda P: (P["a"] * P["b"]).sum(), {"a": np.ones(3), "b": np.ones(3)}, names=["b"])
    assert set(errors) == {"b", "max"}
    with pytest.raises(DomainError):
        finite_diff_check(lambda P: P["a"].sum(), {"a": np.ones(3)}, names=["c"])


def test_numeric_gradient_of_quadratic(rng):
    w = rng.normal(size=(2, 3))
    grad = numeric_gradient(lambda P: (P["w"] ** 2.0).sum(), {"w": w}, "w")
    np.testing.assert_allclose(grad, 2.0 * w, atol=1e-8)


def test_softmax_shift_invariance(rng):
    for _ in range(50):
        x = rng.normal(scale=5.0, size=int(rng.integers(1, 8)))
        c = rng.uniform(-100.0, 100.0)
        np.testing.assert_allclose(softmax(Tensor(x + c)).data, softmax(Tensor(x)).data, rtol=0, atol=1e-12)


def test_matmul_associativity(rng):
    for _ in range(20):
        n, k, m, p = rng.integers(1, 6, size=4)
        a, b, c = rng.normal(size=(n, k)), rng.normal(size=(k, m)), rng.normal(size=(m, p))
        left = matmul(matmul(Tensor(a), Tensor(b)), Tensor(c)).data
        right = matmul(Tensor(a), matmul(Tensor(b), Tensor(c))).data
        np.testing.assert_allclose(left, right, rtol=0, atol=1e-9 * (1.0 + np.abs(left).max()))
