"""Tensor-core unit tests: forward values against hand/brute-force
results, gradients against the central finite-difference oracle."""

import numpy as np
import pytest

from layertrim import tensor as T
from layertrim.tensor import GraphError, ShapeError, Tensor

from helpers import check_op_gradients


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        eye = t64(np.eye(2))
        out = T.matmul(eye, t64(np.eye(2)))
        np.testing.assert_array_equal(out.data, np.eye(2))

    def test_hand_example(self):
        a = t64([[1.0, 2.0], [3.0, 4.0]])
        b = t64([[1.0], [1.0]])
        np.testing.assert_array_equal(T.matmul(a, b).data, [[3.0], [7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))

    def test_gradient_5x7_7x3(self):
        rng = np.random.default_rng(7)
        a = t64(rng.standard_normal((5, 7)))
        b = t64(rng.standard_normal((7, 3)))
        w = t64(rng.standard_normal((5, 3)), grad=False)
        check_op_gradients(lambda: T.mean(T.mul(T.matmul(a, b), w)), [a, b])

    def test_batched_gradient(self):
        rng = np.random.default_rng(8)
        a = t64(rng.standard_normal((2, 3, 4)))
        b = t64(rng.standard_normal((2, 4, 5)))
        check_op_gradients(lambda: T.mean(T.matmul(a, b)), [a, b])


class TestSoftmax:
    def test_constant_row(self):
        out = T.softmax(t64([[2.0, 2.0, 2.0]], grad=False))
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]])

    def test_hand_example(self):
        out = T.softmax(t64([[0.0, np.log(3.0)]], grad=False))
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((10, 9)) * 8
        out = T.softmax(Tensor(x, dtype=np.float64)).data
        assert ((out > 0) & (out < 1)).all()
        np.testing.assert_allclose(out.sum(axis=-1), np.ones(10), atol=1e-6)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x = t64(rng.standard_normal((4, 6)))
        w = t64(rng.standard_normal((4, 6)), grad=False)
        check_op_gradients(lambda: T.mean(T.mul(T.softmax(x), w)), [x])


class TestLayerNorm:
    def test_normalized_row_is_fixed_point(self):
        row = np.array([[-1.0, 0.0, 1.0]]) * np.sqrt(3.0 / 2.0)  # zero mean, unit variance
        gain = t64(np.ones(3), grad=False)
        bias = t64(np.zeros(3), grad=False)
        out = T.layer_norm(Tensor(row, dtype=np.float64), gain, bias, eps=1e-12)
        np.testing.assert_allclose(out.data, row, atol=1e-6)

    def test_constant_row_maps_to_zero(self):
        gain = t64(np.ones(4), grad=False)
        bias = t64(np.zeros(4), grad=False)
        out = T.layer_norm(t64([[5.0, 5.0, 5.0, 5.0]], grad=False), gain, bias)
        np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        x = t64(rng.standard_normal((3, 6)) * 2)
        gain = t64(rng.standard_normal(6))
        bias = t64(rng.standard_normal(6))
        w = t64(rng.standard_normal((3, 6)), grad=False)
        check_op_gradients(lambda: T.mean(T.mul(T.layer_norm(x, gain, bias), w)), [x, gain, bias])


class TestSwiglu:
    def test_zero_gate_zero_output(self):
        x = t64([[0.0, 0.0, 3.0, -2.0]], grad=False)  # u = 0 everywhere
        np.testing.assert_array_equal(T.swiglu(x).data, [[0.0, 0.0]])

    def test_hand_example(self):
        out = T.swiglu(t64([[1.0, 2.0]], grad=False))
        sigma1 = 1.0 / (1.0 + np.exp(-1.0))
        np.testing.assert_allclose(out.data, [[2.0 * sigma1]], atol=1e-12)
        assert abs(out.data[0, 0] - 1.4621) < 1e-4

    def test_odd_width_rejected(self):
        with pytest.raises(ShapeError):
            T.swiglu(t64(np.ones((2, 3))))

    def test_gradient(self):
        rng = np.random.default_rng(6)
        x = t64(rng.standard_normal((3, 8)))
        w = t64(rng.standard_normal((3, 4)), grad=False)
        check_op_gradients(lambda: T.mean(T.mul(T.swiglu(x), w)), [x])


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = t64(np.zeros((5, 4)), grad=False)
        loss = T.cross_entropy_lm(logits, np.array([0, 1, 2, 3, 0]))
        assert abs(loss.item() - np.log(4.0)) < 1e-12

    def test_confident_correct(self):
        logits = np.full((3, 6), -30.0)
        logits[np.arange(3), [1, 2, 3]] = 30.0
        loss = T.cross_entropy_lm(Tensor(logits, dtype=np.float64), np.array([1, 2, 3]))
        assert loss.item() < 1e-8

    def test_matches_direct_logsumexp(self):
        rng = np.random.default_rng(11)
        raw = rng.standard_normal((8, 11)) * 3
        targets = rng.integers(0, 11, 8)
        # independent evaluation: -mean(logit_target - log sum exp(row))
        expected = -np.mean([raw[i, targets[i]] - np.log(np.exp(raw[i]).sum()) for i in range(8)])
        loss = T.cross_entropy_lm(Tensor(raw, dtype=np.float64), targets)
        np.testing.assert_allclose(loss.item(), expected, rtol=1e-12)

    def test_ignore_index(self):
        rng = np.random.default_rng(12)
        raw = rng.standard_normal((4, 5))
        targets = np.array([1, -1, 3, -1])
        loss = T.cross_entropy_lm(Tensor(raw, dtype=np.float64), targets, ignore_index=-1)
        kept = -np.mean([raw[i, targets[i]] - np.log(np.exp(raw[i]).sum()) for i in (0, 2)])
        np.testing.assert_allclose(loss.item(), kept, rtol=1e-12)

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            T.cross_entropy_lm(t64(np.zeros((2, 3)), grad=False), np.array([0, 3]))

    def test_gradient(self):
        rng = np.random.default_rng(13)
        logits = t64(rng.standard_normal((6, 9)))
        targets = rng.integers(0, 9, 6)
        check_op_gradients(lambda: T.cross_entropy_lm(logits, targets), [logits])


class TestKlTeacherStudent:
    def test_identical_logits_zero(self):
        rng = np.random.default_rng(14)
        raw = rng.standard_normal((4, 7))
        loss = T.kl_teacher_student(Tensor(raw.copy()), Tensor(raw.copy()), temperature=1.0)
        assert abs(loss.item()) < 1e-9

    @staticmethod
    def direct_kl(t_row, s_row, temp):
        p = np.exp(t_row / temp) / np.exp(t_row / temp).sum()
        q = np.exp(s_row / temp) / np.exp(s_row / temp).sum()
        return temp * temp * float((p * np.log(p / q)).sum())

    def test_matches_direct_summation(self):
        t_row = np.array([[1.0, 0.0, -1.0]])
        s_row = np.array([[0.5, 0.5, -0.5]])
        loss = T.kl_teacher_student(Tensor(t_row, dtype=np.float64), Tensor(s_row, dtype=np.float64), 1.0)
        np.testing.assert_allclose(loss.item(), self.direct_kl(t_row[0], s_row[0], 1.0), rtol=1e-12)

    def test_temperature_scaling(self):
        t_row = np.array([[2.0, -1.0, 0.5]])
        s_row = np.array([[0.0, 1.0, -2.0]])
        for temp in (1.0, 2.0):
            loss = T.kl_teacher_student(Tensor(t_row, dtype=np.float64), Tensor(s_row, dtype=np.float64), temp)
            np.testing.assert_allclose(loss.item(), self.direct_kl(t_row[0], s_row[0], temp), rtol=1e-12)

    def test_no_gradient_to_teacher(self):
        rng = np.random.default_rng(15)
        teacher = t64(rng.standard_normal((3, 5)))
        student = t64(rng.standard_normal((3, 5)))
        loss = T.kl_teacher_student(teacher, student, 2.0)
        T.backward(loss)
        assert teacher.grad is None
        assert student.grad is not None

    def test_student_gradient(self):
        rng = np.random.default_rng(16)
        teacher = t64(rng.standard_normal((3, 5)), grad=False)
        student = t64(rng.standard_normal((3, 5)))
        check_op_gradients(lambda: T.kl_teacher_student(teacher, student, 2.0), [student])


class TestBackward:
    def test_square_derivative(self):
        x = t64(np.array(3.0))
        y = T.mul(x, x)
        T.backward(y)
        assert x.grad == pytest.approx(6.0)

    def test_fanout_accumulates(self):
        x = t64(np.array(1.5))
        y = T.add(x, x)
        T.backward(y)
        assert x.grad == pytest.approx(2.0)

    def test_non_scalar_rejected(self):
        x = t64(np.ones((2, 2)))
        with pytest.raises(GraphError):
            T.backward(T.mul(x, x))

    def test_second_backward_rejected(self):
        x = t64(np.array(2.0))
        y = T.mul(x, x)
        T.backward(y)
        with pytest.raises(GraphError):
            T.backward(y)

    def test_composed_chain_gradient(self):
        rng = np.random.default_rng(17)
        a = t64(rng.standard_normal((4, 5)))
        b = t64(rng.standard_normal((5, 6)))
        targets = rng.integers(0, 6, 4)
        check_op_gradients(lambda: T.cross_entropy_lm(T.matmul(a, b), targets), [a, b])


class TestMaskAndStructure:
    def test_causal_mask_values(self):
        x = t64(np.zeros((1, 1, 3, 3)), grad=False)
        out = T.causal_mask(x).data[0, 0]
        assert out[0, 1] == T.MASK_VALUE and out[0, 2] == T.MASK_VALUE and out[1, 2] == T.MASK_VALUE
        assert out[0, 0] == 0.0 and out[2, 0] == 0.0

    def test_masked_softmax_zero_weight(self):
        rng = np.random.default_rng(18)
        scores = Tensor(rng.standard_normal((1, 1, 4, 4)), dtype=np.float64)
        w = T.softmax(T.causal_mask(scores)).data[0, 0]
        assert (w[np.triu_indices(4, k=1)] == 0.0).all()
        np.testing.assert_allclose(w.sum(axis=-1), np.ones(4), atol=1e-12)

    def test_slice_concat_roundtrip_gradient(self):
        rng = np.random.default_rng(19)
        x = t64(rng.standard_normal((3, 6)))
        w = t64(rng.standard_normal((3, 6)), grad=False)

        def loss():
            left = T.slice_last(x, 0, 2)
            right = T.slice_last(x, 2, 6)
            return T.mean(T.mul(T.concat_last(left, right), w))

        check_op_gradients(loss, [x])

    def test_embedding_gradient_accumulates_repeats(self):
        table = t64(np.ones((4, 3)))
        ids = np.array([[1, 1, 2]])
        out = T.embedding(table, ids)
        T.backward(T.mean(out))
        np.testing.assert_allclose(table.grad[1], np.full(3, 2.0 / 9.0), rtol=1e-12)
        np.testing.assert_allclose(table.grad[3], np.zeros(3))

    def test_permute_reshape_gradient(self):
        rng = np.random.default_rng(20)
        x = t64(rng.standard_normal((2, 3, 4)))
        w = t64(rng.standard_normal((4, 3, 2)), grad=False)
        check_op_gradients(lambda: T.mean(T.mul(T.permute(x, (2, 1, 0)), w)), [x])


class TestFiniteness:
    @pytest.mark.parametrize("scale", [1.0, 50.0])
    def test_forward_finite_at_large_inputs(self, scale):
        rng = np.random.default_rng(21)
        x = Tensor(rng.uniform(-scale, scale, (4, 8)).astype(np.float32))
        gain = Tensor(np.ones(8, dtype=np.float32))
        bias = Tensor(np.zeros(8, dtype=np.float32))
        assert T.softmax(x).is_finite()
        assert T.layer_norm(x, gain, bias).is_finite()
        assert T.swiglu(x).is_finite()
        scores = Tensor(rng.uniform(-scale, scale, (1, 1, 5, 5)).astype(np.float32))
        assert T.softmax(T.causal_mask(scores)).is_finite()

    def test_nonfinite_detectable(self):
        bad = Tensor(np.array([1.0, np.inf], dtype=np.float32))
        assert not bad.is_finite()
