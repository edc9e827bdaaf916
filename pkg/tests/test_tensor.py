import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovseg import tensor as T
from ovseg.errors import (
    AxisOutOfRange,
    GraphConsumed,
    NonFinite,
    NotScalar,
    ShapeMismatch,
)


class TestCreate:
    def test_basic_construction(self):
        t = T.create([2, 2], [1, 2, 3, 4])
        assert t.shape == (2, 2)
        assert t.data.tolist() == [[1.0, 2.0], [3.0, 4.0]]
        assert not t.requires_grad

    def test_zero_vector(self):
        t = T.create([3], [0, 0, 0])
        assert t.data.tolist() == [0.0, 0.0, 0.0]

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            T.create([2, 2], [1, 2, 3])

    def test_nan_rejected(self):
        with pytest.raises(NonFinite):
            T.create([2], [1.0, float("nan")])

    def test_inf_rejected(self):
        with pytest.raises(NonFinite):
            T.create([2], [1.0, float("inf")])

    def test_shape_data_invariant(self):
        t = T.create([3, 4], list(range(12)))
        assert int(np.prod(t.shape)) == t.data.size


class TestMatmul:
    def test_identity_is_bit_exact(self):
        a = T.create([2, 2], [1.25, -3.5, 0.75, 2.0])
        eye = T.from_array(np.eye(2))
        out = T.matmul(eye, a)
        assert np.array_equal(out.data, a.data)

    def test_hand_computed_product(self):
        a = T.create([2, 2], [1, 2, 3, 4])
        b = T.create([2, 1], [1, 1])
        out = T.matmul(a, b)
        assert out.data.tolist() == [[3.0], [7.0]]

    def test_inner_dim_mismatch(self):
        a = T.create([1, 2], [4, 5])
        b = T.create([1, 3], [1, 2, 3])
        with pytest.raises(ShapeMismatch):
            T.matmul(a, b)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(T.create([2], [0, 0]), axis=0)
        assert out.data.tolist() == [0.5, 0.5]

    def test_large_values_do_not_overflow(self):
        out = T.softmax(T.create([2], [1000.0, 0.0]), axis=0)
        assert out.data[0] == pytest.approx(1.0)
        assert out.data[1] == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_formula(self):
        vals = [1.0, 2.0, 3.0]
        expected = [math.exp(v) for v in vals]
        z = sum(expected)
        expected = [e / z for e in expected]
        out = T.softmax(T.create([3], vals), axis=0)
        np.testing.assert_allclose(out.data, expected, rtol=1e-15)

    def test_axis_out_of_range(self):
        with pytest.raises(AxisOutOfRange):
            T.softmax(T.create([3], [1, 2, 3]), axis=2)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    @settings(max_examples=50)
    def test_rows_sum_to_one(self, row):
        out = T.softmax(T.from_array([row, row]), axis=1)
        sums = out.data.sum(axis=1)
        assert np.all(np.abs(sums - 1.0) <= 1e-12)
        assert np.all(out.data > 0) and np.all(out.data < 1 + 1e-15)


class TestLayerNorm:
    def test_constant_row_maps_to_bias(self):
        t = T.from_array([[5.0, 5.0, 5.0]])
        out = T.layer_norm(t, T.from_array(np.ones(3)), T.from_array(np.zeros(3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_point_row(self):
        eps = 1e-5
        out = T.layer_norm(
            T.from_array([[1.0, 3.0]]),
            T.from_array(np.ones(2)),
            T.from_array(np.zeros(2)),
            eps=eps,
        )
        expected = 1.0 / math.sqrt(1.0 + eps)
        np.testing.assert_allclose(out.data, [[-expected, expected]], rtol=1e-14)

    def test_bias_shape_mismatch(self):
        t = T.from_array([[1.0, 2.0]])
        with pytest.raises(ShapeMismatch):
            T.layer_norm(t, T.from_array(np.ones(2)), T.from_array(np.zeros(3)))


class TestL2Normalize:
    def test_three_four_five(self):
        out = T.l2_normalize(T.create([2], [3, 4]), axis=0)
        np.testing.assert_allclose(out.data, [0.6, 0.8], rtol=1e-15)

    def test_unit_vector_unchanged(self):
        v = T.create([2], [0.6, 0.8])
        out = T.l2_normalize(v, axis=0)
        np.testing.assert_allclose(out.data, v.data, rtol=1e-15)

    def test_zero_vector_stays_zero(self):
        out = T.l2_normalize(T.create([2], [0, 0]), axis=0)
        assert out.data.tolist() == [0.0, 0.0]


class TestBackward:
    def test_linear_sum_gives_ones(self):
        w = T.create([3], [1, 2, 3], requires_grad=True)
        T.tsum(w).backward()
        assert w.grad.tolist() == [1.0, 1.0, 1.0]

    def test_sum_of_squares(self):
        w = T.create([2], [1, 2], requires_grad=True)
        T.tsum(T.mul(w, w)).backward()
        np.testing.assert_allclose(w.grad, [2.0, 4.0], rtol=1e-14)

    def test_not_scalar(self):
        w = T.create([2], [1, 2], requires_grad=True)
        with pytest.raises(NotScalar):
            T.mul(w, 2.0).backward()

    def test_graph_consumed_on_second_call(self):
        w = T.create([2], [1, 2], requires_grad=True)
        loss = T.tsum(T.mul(w, w))
        loss.backward()
        with pytest.raises(GraphConsumed):
            loss.backward()

    def test_backward_accumulates(self):
        w = T.create([2], [1, 2], requires_grad=True)
        T.tsum(T.mul(w, w)).backward()
        T.tsum(T.mul(w, w)).backward()
        np.testing.assert_allclose(w.grad, [4.0, 8.0], rtol=1e-14)

    def test_frozen_tensors_receive_no_grad(self):
        frozen = T.create([2], [1, 2], requires_grad=False)
        live = T.create([2], [3, 4], requires_grad=True)
        T.tsum(T.mul(frozen, live)).backward()
        assert frozen.grad is None
        assert live.grad is not None

    def test_shared_input_used_twice(self):
        w = T.create([2], [1.0, 2.0], requires_grad=True)
        loss = T.tsum(T.add(w, w))
        loss.backward()
        assert w.grad.tolist() == [2.0, 2.0]

    def test_gradient_map_returned(self):
        w = T.create([2], [1, 2], requires_grad=True)
        gmap = T.tsum(w).backward()
        assert w in gmap
        assert gmap[w].tolist() == [1.0, 1.0]


class TestOpErrors:
    def test_elementwise_shape_mismatch(self):
        a = T.create([2], [1, 2])
        b = T.create([3], [1, 2, 3])
        for op in (T.add, T.sub, T.mul):
            with pytest.raises(ShapeMismatch):
                op(a, b)

    def test_nonfinite_detection_can_be_toggled(self):
        a = T.from_array([700.0, 710.0])
        with pytest.raises(NonFinite):
            T.tsum(T.mul(T.from_array(np.exp([1.0, 1.0]) * 1e300), T.from_array([1e9, 1e9])))
        T.set_finite_checks(False)
        try:
            with np.errstate(over="ignore"):
                out = T.mul(T.from_array([1e300]), T.from_array([1e300]))
            assert np.isinf(out.data).any()
        finally:
            T.set_finite_checks(True)
        assert np.isfinite(np.exp(a.data * 0)).all()


class TestShapeOps:
    def test_concat_split_round_trip(self):
        a = T.from_array(np.arange(6.0).reshape(2, 3))
        b = T.from_array(np.arange(9.0).reshape(3, 3))
        joined = T.concat([a, b], axis=0)
        assert joined.shape == (5, 3)
        parts = T.split(joined, [2, 3], axis=0)
        np.testing.assert_array_equal(parts[0].data, a.data)
        np.testing.assert_array_equal(parts[1].data, b.data)

    def test_transpose_round_trip(self):
        a = T.from_array(np.arange(24.0).reshape(2, 3, 4))
        back = T.transpose(T.transpose(a, (1, 2, 0)), (2, 0, 1))
        np.testing.assert_array_equal(back.data, a.data)

    def test_reshape_bad_size(self):
        with pytest.raises(ShapeMismatch):
            T.reshape(T.from_array(np.zeros((2, 3))), (4, 2))

    def test_upsample_nearest(self):
        x = T.from_array(np.arange(4.0).reshape(2, 2, 1))
        up = T.upsample2x(x)
        assert up.shape == (4, 4, 1)
        np.testing.assert_array_equal(up.data[:2, :2, 0], 0.0)
        np.testing.assert_array_equal(up.data[2:, 2:, 0], 3.0)

    def test_add_bias_broadcasts_last_axis(self):
        x = T.from_array(np.zeros((2, 3)))
        out = T.add_bias(x, T.from_array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])

    def test_tile_leading(self):
        x = T.from_array([1.0, 2.0])
        out = T.tile_leading(x, 3)
        assert out.shape == (3, 2)
        np.testing.assert_array_equal(out.data, [[1, 2]] * 3)
