import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from setnet.errors import DimensionError, EmptyReductionError, NumericError
from setnet.tensor import (
    Permutation,
    add,
    apply_permutation,
    as_tensor,
    concatenate,
    elementwise,
    matmul,
    multiply,
    reduce_over_axis,
    reshape,
    subtract,
)


def matmul_reference(a, b):
    """Triple-loop oracle, independent of the library path."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        out = matmul(np.eye(2), [[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(out, [[3.0, 4.0], [5.0, 6.0]])

    def test_row_times_column(self):
        assert matmul([[1.0, 2.0]], [[3.0], [4.0]])[0, 0] == pytest.approx(11.0)

    def test_matches_reference_loop(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        got = matmul(a, b)
        want = matmul_reference(a, b)
        assert np.max(np.abs(got - want)) <= 1e-12 * np.max(np.abs(want))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestReduce:
    def test_max(self):
        r = reduce_over_axis(np.array([[1.0, 2.0], [3.0, 0.0]]), 0, "max")
        assert np.array_equal(r.values, [3.0, 2.0])
        assert np.array_equal(r.argmax, [1, 0])

    def test_sum(self):
        r = reduce_over_axis(np.array([[1.0, 2.0], [3.0, 0.0]]), 0, "sum")
        assert np.array_equal(r.values, [4.0, 2.0])
        assert r.argmax is None

    def test_mean(self):
        r = reduce_over_axis(np.array([[1.0, 2.0], [3.0, 0.0]]), 0, "mean")
        assert np.array_equal(r.values, [2.0, 1.0])

    def test_max_tie_takes_lowest_index(self):
        r = reduce_over_axis(np.array([2.0, 5.0, 5.0]), 0, "max")
        assert r.argmax == 1

    def test_empty_axis(self):
        with pytest.raises(EmptyReductionError):
            reduce_over_axis(np.empty((0, 2)), 0, "sum")

    @pytest.mark.parametrize("kind", ["sum", "max", "mean"])
    def test_reduction_invariant_under_permutation(self, kind):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(9, 4))
        for _ in range(20):
            p = Permutation.random(9, rng)
            base = reduce_over_axis(x, 0, kind).values
            permuted = reduce_over_axis(apply_permutation(x, p, 0), 0, kind).values
            assert np.max(np.abs(base - permuted)) <= 1e-12 * max(1.0, np.max(np.abs(base)))


class TestPermutation:
    def test_identity_action(self):
        x = np.arange(6.0).reshape(3, 2)
        assert np.array_equal(apply_permutation(x, Permutation.identity(3), 0), x)

    def test_swap(self):
        out = apply_permutation(np.array([[1.0], [2.0]]), Permutation(np.array([1, 0])), 0)
        assert np.array_equal(out, [[2.0], [1.0]])

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(7, 3))
        p = Permutation.random(7, rng)
        back = apply_permutation(apply_permutation(x, p, 0), p.inverse(), 0)
        assert np.array_equal(back, x)

    def test_not_a_bijection(self):
        with pytest.raises(DimensionError):
            Permutation(np.array([0, 0, 2]))

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            apply_permutation(np.ones((3, 2)), Permutation.identity(4), 0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 2**31 - 1))
    def test_group_action(self, n, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, 2))
        p = Permutation.random(n, rng)
        q = Permutation.random(n, rng)
        two_step = apply_permutation(apply_permutation(x, p, 0), q, 0)
        composed = apply_permutation(x, q.compose(p), 0)
        assert np.array_equal(two_step, composed)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 2**31 - 1))
    def test_inverse_composes_to_identity(self, n, seed):
        rng = np.random.default_rng(seed)
        p = Permutation.random(n, rng)
        assert np.array_equal(p.compose(p.inverse()).mapping, np.arange(n))
        assert np.array_equal(p.inverse().compose(p).mapping, np.arange(n))

    def test_matrix_matches_action(self):
        rng = np.random.default_rng(5)
        p = Permutation.random(5, rng)
        x = rng.normal(size=(5, 3))
        assert np.allclose(p.matrix() @ x, apply_permutation(x, p, 0))


class TestElementwise:
    def test_tanh_zero(self):
        assert elementwise(np.array(0.0), "tanh") == 0.0

    def test_elu_negative_closed_form(self):
        assert elementwise(np.array(-1.0), "elu") == pytest.approx(np.exp(-1.0) - 1.0)

    def test_elu_positive_is_identity(self):
        assert elementwise(np.array(2.5), "elu") == 2.5

    def test_sigmoid_zero(self):
        assert elementwise(np.array(0.0), "sigmoid") == 0.5

    def test_sigmoid_extreme_is_stable(self):
        out = elementwise(np.array([-800.0, 800.0]), "sigmoid")
        assert out[0] == pytest.approx(0.0, abs=1e-300)
        assert out[1] == pytest.approx(1.0)

    def test_unknown_fn(self):
        with pytest.raises(DimensionError):
            elementwise(np.zeros(2), "relu")


class TestPlumbing:
    def test_broadcast_add(self):
        out = add(np.ones((2, 3)), np.array([1.0, 2.0, 3.0]))
        assert np.array_equal(out, [[2.0, 3.0, 4.0]] * 2)

    def test_subtract_multiply(self):
        a = np.array([4.0, 9.0])
        assert np.array_equal(subtract(a, [1.0, 2.0]), [3.0, 7.0])
        assert np.array_equal(multiply(a, 2.0), [8.0, 18.0])

    def test_bad_broadcast(self):
        with pytest.raises(DimensionError):
            add(np.ones((2, 3)), np.ones((2, 4)))

    def test_concatenate(self):
        out = concatenate([np.ones((1, 2)), np.zeros((1, 2))], axis=0)
        assert out.shape == (2, 2)
        with pytest.raises(DimensionError):
            concatenate([np.ones((1, 2)), np.zeros((1, 3))], axis=0)

    def test_reshape(self):
        assert reshape(np.arange(6.0), (2, 3)).shape == (2, 3)
        with pytest.raises(DimensionError):
            reshape(np.arange(6.0), (4, 2))

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericError):
            as_tensor([1.0, np.nan])
        with pytest.raises(NumericError):
            multiply(np.array([1e308]), np.array([1e308]))
