import numpy as np
import pytest

from setnet.errors import (
    DegenerateSetError,
    DimensionError,
    EmptyReductionError,
    FormatError,
)
from setnet.layers import (
    Dropout,
    DropoutSpec,
    EquivariantLayer,
    Param,
    PoolSpec,
    SetBatch,
    count_params,
    dense_forward,
    dropout_forward,
    equivariant_forward,
    load_params,
    normalize_sets,
    restore_params,
    save_params,
    set_pool,
)
from setnet.tensor import Permutation

VARIANTS = ["scalar_sum", "scalar_max", "channel_full", "channel_factored"]


def single_set(values):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    return SetBatch(values[None], np.array([values.shape[0]]))


def random_layer(variant, k_in, k_out, rng, activation="tanh", aggregate=None):
    if variant.startswith("scalar"):
        k_in = k_out = 1
    layer = EquivariantLayer(k_in, k_out, variant, activation, aggregate=aggregate, rng=rng)
    for p in layer.params():
        p.value = rng.normal(scale=0.7, size=p.value.shape)
    return layer


def random_padded_batch(rng, n_max=8, k=3, batch=3):
    cards = rng.integers(1, n_max + 1, size=batch)
    cards[0] = n_max  # keep at least one full set
    values = rng.normal(size=(batch, n_max, k))
    return SetBatch(values, cards)


def permute_and_compare(layer_fn, batch, rng, tol=1e-9):
    """max |f(perm x) - perm f(x)| over one random per-set permutation."""
    out = layer_fn(batch)
    perms = [Permutation.random(int(n), rng) for n in batch.cardinalities]
    out_permuted = layer_fn(batch.permute_members(perms))
    want = out.permute_members(perms)
    return float(np.max(np.abs(out_permuted.values - want.values)))


class TestEquivariantExamples:
    def test_scalar_sum_reduces_to_identity(self):
        layer = EquivariantLayer(1, 1, "scalar_sum", "identity")
        layer.lam.value = np.array([[1.0]])
        layer.gam.value = np.array([[0.0]])
        batch = single_set([1.0, 2.0, 3.0])
        out = equivariant_forward(layer, batch)
        assert np.allclose(out.values, batch.values)

    def test_scalar_sum_adds_total(self):
        layer = EquivariantLayer(1, 1, "scalar_sum", "identity")
        layer.lam.value = np.array([[1.0]])
        layer.gam.value = np.array([[1.0]])
        out = equivariant_forward(layer, single_set([1.0, 2.0, 3.0]))
        assert np.allclose(out.values[0, :, 0], [7.0, 8.0, 9.0])

    def test_factored_subtracts_column_max(self):
        layer = EquivariantLayer(2, 2, "channel_factored", "identity")
        layer.gam.value = np.eye(2)
        layer.beta.value = np.zeros(2)
        out = equivariant_forward(layer, single_set([[1.0, 5.0], [3.0, 2.0]]))
        assert np.allclose(out.values[0], [[-2.0, 0.0], [0.0, -3.0]])

    def test_scalar_variants_reject_channels(self):
        with pytest.raises(DimensionError):
            EquivariantLayer(2, 2, "scalar_sum")

    def test_channel_mismatch(self):
        layer = EquivariantLayer(3, 2, "channel_full")
        with pytest.raises(DimensionError):
            equivariant_forward(layer, single_set([[1.0, 2.0]]))

    def test_empty_set_rejected(self):
        with pytest.raises(EmptyReductionError):
            SetBatch(np.zeros((1, 3, 2)), np.array([0]))

    def test_parameter_counts(self):
        full = EquivariantLayer(3, 5, "channel_full")
        factored = EquivariantLayer(3, 5, "channel_factored")
        assert count_params(full.params()) == 2 * 3 * 5
        assert count_params(factored.params()) == 3 * 5 + 5


class TestEquivarianceProperty:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_single_layer_equivariant(self, variant):
        rng = np.random.default_rng(17)
        for trial in range(30):
            n = int(rng.integers(1, 33))
            k_out = int(rng.integers(1, 9))
            k_in = 1 if variant.startswith("scalar") else int(rng.integers(1, 9))
            layer = random_layer(variant, k_in, k_out, rng)
            batch = SetBatch(rng.normal(size=(2, n, layer.k_in)), np.array([n, max(1, n // 2)]))
            dev = permute_and_compare(lambda b: equivariant_forward(layer, b), batch, rng)
            assert dev < 1e-9

    def test_three_layer_composition_equivariant(self):
        rng = np.random.default_rng(23)
        for trial in range(10):
            layers = [
                random_layer("channel_full", 3, 5, rng),
                random_layer("channel_factored", 5, 4, rng),
                random_layer("channel_full", 4, 2, rng, aggregate="sum"),
            ]

            def stack(batch):
                for layer in layers:
                    batch = equivariant_forward(layer, batch)
                return batch

            batch = random_padded_batch(rng, n_max=10, k=3)
            assert permute_and_compare(stack, batch, rng) < 1e-9

    def test_invariance_of_pooled_stack(self):
        rng = np.random.default_rng(31)
        for kind in ("sum", "max", "mean"):
            layers = [random_layer("channel_factored", 3, 6, rng), random_layer("channel_full", 6, 4, rng)]
            batch = random_padded_batch(rng, n_max=9, k=3)

            def pooled(b):
                for layer in layers:
                    b = equivariant_forward(layer, b)
                return set_pool(b, PoolSpec(kind))

            base = pooled(batch)
            perms = [Permutation.random(int(n), rng) for n in batch.cardinalities]
            permuted = pooled(batch.permute_members(perms))
            assert np.max(np.abs(base - permuted)) < 1e-9

    def test_max_reparametrization(self):
        # subtracting gamma * max equals adding (-gamma) * max in the sum-family form
        rng = np.random.default_rng(41)
        lam, gam = 0.8, -1.3
        max_form = EquivariantLayer(1, 1, "scalar_max", "tanh")
        max_form.lam.value = np.array([[lam]])
        max_form.gam.value = np.array([[gam]])
        plus_form = EquivariantLayer(1, 1, "scalar_sum", "tanh", aggregate="max")
        plus_form.lam.value = np.array([[lam]])
        plus_form.gam.value = np.array([[-gam]])
        batch = random_padded_batch(rng, n_max=7, k=1)
        a = equivariant_forward(max_form, batch)
        b = equivariant_forward(plus_form, batch)
        assert np.array_equal(a.values, b.values)


class TestPaddingNeutrality:
    def test_enlarging_padding_changes_nothing(self):
        rng = np.random.default_rng(53)
        cards = np.array([4, 2])
        vals = rng.normal(size=(2, 4, 3))
        small = SetBatch(vals, cards)
        big = SetBatch(np.concatenate([vals, np.zeros((2, 3, 3))], axis=1), cards)

        max_layer = random_layer("channel_factored", 3, 4, rng)
        a = equivariant_forward(max_layer, small).values
        b = equivariant_forward(max_layer, big).values
        for s in range(2):
            n = cards[s]
            assert np.array_equal(a[s, :n], b[s, :n])  # bit-level for the max path

        sum_layer = random_layer("channel_full", 3, 4, rng, aggregate="sum")
        a = equivariant_forward(sum_layer, small).values
        b = equivariant_forward(sum_layer, big).values
        for s in range(2):
            n = cards[s]
            assert np.max(np.abs(a[s, :n] - b[s, :n])) < 1e-12

    def test_pool_ignores_padding(self):
        batch = SetBatch(np.array([[[1.0, 2.0], [3.0, 4.0], [0.0, 0.0], [0.0, 0.0]]]), np.array([2]))
        assert np.array_equal(set_pool(batch, PoolSpec("sum")), [[4.0, 6.0]])
        assert np.array_equal(set_pool(batch, PoolSpec("mean")), [[2.0, 3.0]])
        negatives = SetBatch(
            np.array([[[-1.0, -2.0], [-3.0, -4.0], [0.0, 0.0], [0.0, 0.0]]]), np.array([2])
        )
        assert np.array_equal(set_pool(negatives, PoolSpec("max")), [[-1.0, -2.0]])


class TestSetPool:
    def test_sum_example(self):
        assert np.array_equal(set_pool(single_set([[1.0, 2.0], [3.0, 4.0]]), PoolSpec("sum")), [[4.0, 6.0]])

    def test_max_invariant_under_permutation(self):
        rng = np.random.default_rng(3)
        batch = single_set(rng.normal(size=(6, 2)))
        base = set_pool(batch, PoolSpec("max"))
        for _ in range(10):
            p = Permutation.random(6, rng)
            assert np.array_equal(set_pool(batch.permute_members([p]), PoolSpec("max")), base)

    def test_unknown_kind(self):
        with pytest.raises(DimensionError):
            PoolSpec("median")


class TestDropout:
    def test_rate_zero_identity(self):
        rng = np.random.default_rng(0)
        batch = single_set(np.arange(6.0).reshape(3, 2))
        out = dropout_forward(batch, DropoutSpec(0.0, True), rng, training=True)
        assert np.array_equal(out.values, batch.values)

    def test_eval_time_identity(self):
        rng = np.random.default_rng(0)
        batch = single_set(np.arange(6.0).reshape(3, 2))
        out = dropout_forward(batch, DropoutSpec(0.9, True), rng, training=False)
        assert np.array_equal(out.values, batch.values)

    def test_simultaneous_mask_constant_across_members(self):
        rng = np.random.default_rng(1)
        drop = Dropout(0.5, simultaneous=True)
        for _ in range(100):
            mask = drop.sample_mask(rng, (4, 7, 6))
            assert mask.shape == (4, 1, 6)  # one value per (set, channel)

    def test_per_member_mask_varies_across_members(self):
        rng = np.random.default_rng(2)
        drop = Dropout(0.5, simultaneous=False)
        mask = drop.sample_mask(rng, (2, 50, 4))
        assert mask.shape == (2, 50, 4)
        assert not all(np.allclose(mask[:, 0], mask[:, i]) for i in range(50))

    def test_monte_carlo_mean_matches_identity(self):
        # inverted dropout is unbiased: the mask average approaches 1 within 3 sigma
        rng = np.random.default_rng(5)
        rate = 0.3
        drop = Dropout(rate, simultaneous=True)
        trials = 10_000
        acc = np.zeros((2, 1, 4))
        for _ in range(trials):
            acc += drop.sample_mask(rng, (2, 3, 4))
        mean = acc / trials
        keep = 1.0 - rate
        sigma = np.sqrt(rate / keep / trials)  # std of the scaled Bernoulli mean
        assert np.max(np.abs(mean - 1.0)) < 3.0 * sigma


class TestDense:
    def test_identity_case(self):
        out = dense_forward(np.eye(3), np.zeros(3), np.arange(3.0))
        assert np.array_equal(out, np.arange(3.0))

    def test_zero_bias_matches_matmul(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 2))
        x = rng.normal(size=(5, 4))
        assert np.allclose(dense_forward(w, np.zeros(2), x), x @ w)

    def test_reference_loop(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(3, 2))
        b = rng.normal(size=2)
        x = rng.normal(size=(4, 3))
        want = np.empty((4, 2))
        for i in range(4):
            for j in range(2):
                want[i, j] = np.tanh(sum(x[i, k] * w[k, j] for k in range(3)) + b[j])
        assert np.max(np.abs(dense_forward(w, b, x, "tanh") - want)) < 1e-12

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            dense_forward(np.eye(3), np.zeros(3), np.ones((2, 4)))
        with pytest.raises(DimensionError):
            dense_forward(np.eye(3), np.zeros(2), np.ones((2, 3)))


class TestNormalize:
    def test_already_normalized_unchanged(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 3))
        x = x - x.mean(axis=0)
        x = x / np.sqrt((x**2).mean())
        out = normalize_sets(single_set(x))
        assert np.max(np.abs(out.values[0] - x)) < 1e-6

    def test_postconditions(self):
        rng = np.random.default_rng(8)
        batch = SetBatch(rng.normal(2.0, 3.0, size=(3, 9, 4)), np.array([9, 5, 2]))
        out = normalize_sets(batch)
        for s, n in enumerate(batch.cardinalities):
            real = out.values[s, :n]
            assert np.max(np.abs(real.mean(axis=0))) < 1e-9
            assert (real**2).mean() == pytest.approx(1.0, abs=1e-6)

    def test_translation_invariant(self):
        rng = np.random.default_rng(9)
        vals = rng.normal(size=(1, 6, 3))
        shift = np.array([5.0, -2.0, 100.0])
        a = normalize_sets(SetBatch(vals, np.array([6])))
        b = normalize_sets(SetBatch(vals + shift, np.array([6])))
        assert np.max(np.abs(a.values - b.values)) < 1e-6

    def test_singleton_set_rejected(self):
        with pytest.raises(DegenerateSetError):
            normalize_sets(SetBatch(np.ones((1, 3, 2)), np.array([1])))


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        params = [Param("a.W", rng.normal(size=(3, 4))), Param("a.b", rng.normal(size=4)), Param("s", np.array(2.5))]
        path = tmp_path / "ckpt.txt"
        save_params(path, params, {"val_metric": "0.75", "epoch": "3"})
        arrays, meta = load_params(path)
        assert meta == {"val_metric": "0.75", "epoch": "3"}
        for p in params:
            assert np.array_equal(arrays[p.name], p.value)
        fresh = [Param(p.name, np.zeros_like(p.value)) for p in params]
        restore_params(fresh, arrays)
        for p, q in zip(params, fresh):
            assert np.array_equal(p.value, q.value)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("something else\n")
        with pytest.raises(FormatError):
            load_params(path)

    def test_truncated_param(self, tmp_path):
        path = tmp_path / "trunc.txt"
        path.write_text("setnet-params 1\nparam w 1 4\n1.0 2.0\n")
        with pytest.raises(FormatError):
            load_params(path)

    def test_missing_param_on_restore(self, tmp_path):
        path = tmp_path / "ok.txt"
        save_params(path, [Param("w", np.ones(2))])
        arrays, _ = load_params(path)
        with pytest.raises(FormatError):
            restore_params([Param("v", np.ones(2))], arrays)


class TestSetBatch:
    def test_padding_is_canonicalized_to_zero(self):
        batch = SetBatch(np.ones((1, 4, 2)), np.array([2]))
        assert np.array_equal(batch.values[0, 2:], np.zeros((2, 2)))

    def test_cardinality_bounds(self):
        with pytest.raises(DimensionError):
            SetBatch(np.ones((1, 3, 2)), np.array([4]))

    def test_permute_members_respects_cardinality(self):
        rng = np.random.default_rng(0)
        batch = SetBatch(rng.normal(size=(1, 5, 2)), np.array([3]))
        p = Permutation(np.array([2, 0, 1]))
        out = batch.permute_members([p])
        assert np.array_equal(out.values[0, :3], batch.values[0, p.mapping])
        assert np.array_equal(out.values[0, 3:], np.zeros((2, 2)))
