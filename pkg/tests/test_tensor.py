"""Tensor engine: op semantics, gradient correctness, tape behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aligndet.gradcheck import check_gradients
from aligndet.tensor import (ShapeError, Tensor, clip_grad_norm, concat,
                             layer_norm, log_softmax, softmax)


class TestMatmul:
    def test_identity(self):
        out = Tensor([[1.0, 0.0], [0.0, 1.0]]) @ Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(out.data, [[5, 6], [7, 8]])

    def test_dot_product(self):
        out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_gradient_vs_finite_differences(self, rng):
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        errors = check_gradients(
            lambda t: ((t["a"] @ t["b"]) ** 2).sum(), {"a": a, "b": b},
            rel_tol=1e-6)
        assert max(errors.values()) < 1e-6

    def test_batched_gradient(self, rng):
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(4, 5))
        check_gradients(lambda t: ((t["a"] @ t["b"]) ** 2).sum(),
                        {"a": a, "b": b}, rel_tol=1e-5)


class TestSoftmax:
    def test_symmetry(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3] * 3)

    def test_shift_invariance(self):
        out = softmax(Tensor([1000.0, 1000.0]), axis=0)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_against_high_precision_oracle(self):
        import mpmath
        x = [1.0, 2.0, 3.0]
        exps = [mpmath.e ** v for v in x]
        total = sum(exps)
        expected = [float(e / total) for e in exps]
        out = softmax(Tensor(x), axis=0)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    @given(arrays(np.float64, (3, 5),
                  elements=st.floats(-50, 50, allow_nan=False)))
    @settings(max_examples=50, deadline=None)
    def test_rows_sum_to_one(self, x):
        out = softmax(Tensor(x), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_gradient(self, rng):
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))
        check_gradients(lambda t: (softmax(t["x"], axis=-1) * w).sum(),
                        {"x": x}, rel_tol=1e-5)


class TestSigmoid:
    def test_zero(self):
        assert Tensor(0.0).sigmoid().item() == 0.5

    def test_saturation_no_overflow(self):
        assert Tensor(1000.0).sigmoid().item() == 1.0
        assert Tensor(-1000.0).sigmoid().item() == 0.0

    def test_against_high_precision_oracle(self):
        import mpmath
        expected = float(1 / (1 + mpmath.e ** -1))
        assert abs(Tensor(1.0).sigmoid().item() - expected) < 1e-12


class TestLayerNorm:
    def test_constant_row_collapses_to_zero(self):
        x = Tensor(np.full((2, 4), 7.0))
        out = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_unit_variance_pair(self):
        out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)),
                         Tensor(np.zeros(2)))
        # variance 1, epsilon 1e-5: x / sqrt(1 + 1e-5)
        expected = np.array([[1.0, -1.0]]) / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_affine_shape_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)),
                       Tensor(np.zeros(3)))

    def test_gradcheck(self, rng):
        x = rng.normal(size=(3, 8))
        gamma = rng.normal(size=8)
        beta = rng.normal(size=8)
        w = rng.normal(size=(3, 8))
        errors = check_gradients(
            lambda t: (layer_norm(t["x"], t["gamma"], t["beta"]) * w).sum(),
            {"x": x, "gamma": gamma, "beta": beta}, rel_tol=1e-5)
        assert max(errors.values()) < 1e-5


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0], requires_grad=True).backward()

    def test_reuse_accumulates_branch_sum(self, rng):
        value = rng.normal(size=(3,))
        # two branches reuse x; grad must equal the sum of single-branch grads
        x = Tensor(value, requires_grad=True)
        ((x * x).sum() + (x * 3.0).sum()).backward()
        combined = x.grad.copy()

        x1 = Tensor(value, requires_grad=True)
        (x1 * x1).sum().backward()
        x2 = Tensor(value, requires_grad=True)
        (x2 * 3.0).sum().backward()
        np.testing.assert_allclose(combined, x1.grad + x2.grad)

    def test_reuse_matches_finite_differences(self, rng):
        value = rng.normal(size=(4,))
        check_gradients(
            lambda t: (t["x"].sigmoid() * t["x"]).sum() + (t["x"] ** 2).sum(),
            {"x": value}, rel_tol=1e-6)

    def test_tape_cleared_after_backward(self):
        x = Tensor([1.0], requires_grad=True)
        y = (x * 2.0).sum()
        y.backward()
        assert y._parents == () and y._backward is None

    @given(st.integers(2, 6))
    @settings(max_examples=20, deadline=None)
    def test_k_branch_accumulation(self, k):
        x = Tensor([1.5, -0.5], requires_grad=True)
        total = None
        for _ in range(k):
            term = (x * x).sum()
            total = term if total is None else total + term
        total.backward()
        np.testing.assert_allclose(x.grad, k * 2 * x.data)


class TestMiscOps:
    def test_concat_gradients(self, rng):
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(2, 2))
        check_gradients(
            lambda t: (concat([t["a"], t["b"]], axis=1) ** 2).sum(),
            {"a": a, "b": b}, rel_tol=1e-6)

    def test_getitem_fancy_index_gradients(self, rng):
        x = rng.normal(size=(5, 3))
        idx = np.array([0, 2, 2, 4])
        check_gradients(lambda t: (t["x"][idx, :] ** 2).sum(), {"x": x},
                        rel_tol=1e-6)

    def test_log_softmax_matches_log_of_softmax(self, rng):
        x = Tensor(rng.normal(size=(4, 6)))
        np.testing.assert_allclose(log_softmax(x, axis=-1).data,
                                   np.log(softmax(x, axis=-1).data),
                                   atol=1e-12)

    def test_maximum_minimum_grads(self, rng):
        a = rng.normal(size=(6,))
        b = rng.normal(size=(6,))
        check_gradients(
            lambda t: (t["a"].maximum(t["b"]) + t["a"].minimum(t["b"])).sum(),
            {"a": a, "b": b}, rel_tol=1e-6)

    def test_clip_grad_norm(self):
        p = Tensor([3.0, 4.0], requires_grad=True)
        p.grad = np.array([3.0, 4.0])
        norm = clip_grad_norm([p], 0.1)
        assert norm == pytest.approx(5.0)
        assert np.linalg.norm(p.grad) == pytest.approx(0.1)
