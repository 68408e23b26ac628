import numpy as np
import pytest

from ..turntaking.bundle import joint_loss_and_grads
from ..turntaking.fusion import (FullFusionOracle, FusionParams, fuse, fuse_forward, fuse_terms,
                                 fuse_via_full_tensor, init_fusion, predict, rank_terms,
                                 reconstruct_full_weight)
from ..turntaking.models import (MODALITIES, ConfigError, DimensionError, Modality, ModalityMask)
from ..turntaking.numeric import MlpParams, finite_diff_check, init_mlp, make_rng
from .conftest import make_sample

T, A, V = Modality.TEXT, Modality.AUDIO, Modality.VIDEO


def hand_params(w_t, w_a, w_v):
    factors = {T: np.array(w_t, dtype=float)[None], A: np.array(w_a, dtype=float)[None],
               V: np.array(w_v, dtype=float)[None]}
    return FusionParams(factors, MlpParams.zeros((factors[T].shape[1], 3)))


def random_params(rng, dims=None, d_h=None, rank=None):
    dims = dims or {m: int(rng.integers(1, 5)) for m in MODALITIES}
    d_h = d_h or int(rng.integers(1, 5))
    rank = rank or int(rng.integers(1, 4))
    return init_fusion(dims, rng, fusion_dim=d_h, rank=rank, head_sizes=(d_h, 3))


def random_features(rng, params, mask=ModalityMask.full()):
    return {m: (rng.normal(size=params.feature_dims[m]) if m in mask else None) for m in MODALITIES}


class TestFuseExamples:

    def test_text_only_rank_one(self):
        params = hand_params([[1, 2], [3, 4]], [[1], [1]], [[1], [1]])
        h = fuse(np.array([1.0, 0.0]), None, None, ModalityMask.of("T"), params)
        assert np.array_equal(h, [1.0, 3.0])

    def test_three_modalities_multiply(self):
        params = hand_params([[1, 2], [3, 4]], [[2], [2]], [[1], [1]])
        h = fuse(np.array([1.0, 0.0]), np.array([1.0]), np.array([1.0]), ModalityMask.full(), params)
        assert np.array_equal(h, [2.0, 6.0])

    def test_rank_sum_outside_product(self):
        rng = make_rng(0)
        params = random_params(rng, rank=3)
        feats = random_features(rng, params)
        h = fuse(feats[T], feats[A], feats[V], ModalityMask.full(), params)
        expected = sum((params.factors[T][i] @ feats[T]) * (params.factors[A][i] @ feats[A])
                       * (params.factors[V][i] @ feats[V]) for i in range(3))
        assert np.allclose(h, expected, atol=1e-12)


class TestFuseValidation:

    def setup_method(self):
        self.rng = make_rng(1)
        self.params = random_params(self.rng, dims={T: 2, A: 3, V: 4}, d_h=3, rank=2)

    def test_empty_mask(self):
        with pytest.raises(ConfigError):
            fuse(None, None, None, ModalityMask.empty(), self.params)

    def test_feature_supplied_for_absent_modality(self):
        with pytest.raises(ConfigError):
            fuse(np.zeros(2), np.zeros(3), None, ModalityMask.of("T"), self.params)

    def test_feature_missing_for_present_modality(self):
        with pytest.raises(ConfigError):
            fuse(np.zeros(2), None, None, ModalityMask.of("TA"), self.params)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            fuse(np.zeros(3), None, None, ModalityMask.of("T"), self.params)

    def test_factor_shapes_must_agree(self):
        factors = dict(self.params.factors)
        factors[A] = np.zeros((3, 3, 3))
        with pytest.raises(ConfigError):
            FusionParams(factors, self.params.head)


class TestLowRankIdentity:

    def test_matches_full_tensor_on_random_instances(self):
        rng = make_rng(2)
        for _ in range(100):
            params = random_params(rng)
            feats = random_features(rng, params)
            low_rank = fuse(feats[T], feats[A], feats[V], ModalityMask.full(), params)
            full = fuse_via_full_tensor(feats[T], feats[A], feats[V], reconstruct_full_weight(params))
            assert np.allclose(low_rank, full, rtol=1e-9, atol=1e-9)

    def test_absent_modality_equals_all_ones_term(self):
        rng = make_rng(3)
        for case in range(1000):
            params = random_params(rng)
            mask = ModalityMask.all_nonempty()[case % 7]
            feats = random_features(rng, params, mask)
            h = fuse(feats[T], feats[A], feats[V], mask, params)
            terms = {m: (rank_terms(feats[m], params.factors[m]) if m in mask
                         else np.ones((params.rank, params.fusion_dim))) for m in MODALITIES}
            assert np.array_equal(h, fuse_terms(terms))

    def test_sign_pattern_survives_positive_scaling(self):
        rng = make_rng(4)
        params = random_params(rng, rank=1)
        feats = random_features(rng, params)
        h = fuse(feats[T], feats[A], feats[V], ModalityMask.full(), params)
        scaled = fuse(3.0 * feats[T], feats[A], 0.5 * feats[V], ModalityMask.full(), params)
        assert np.array_equal(np.sign(h), np.sign(scaled))


class TestReconstruct:

    def test_rank_one_all_ones(self):
        params = hand_params(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)))
        oracle = reconstruct_full_weight(params)
        assert np.array_equal(oracle.weight, np.ones((2, 2, 3, 2)))
        assert np.array_equal(oracle.bias, np.zeros(2))

    def test_zero_second_component_changes_nothing(self):
        rng = make_rng(5)
        one = random_params(rng, dims={T: 2, A: 2, V: 2}, d_h=3, rank=1)
        two = FusionParams({m: np.concatenate([one.factors[m], np.zeros_like(one.factors[m])])
                            for m in MODALITIES}, one.head)
        assert np.array_equal(reconstruct_full_weight(one).weight, reconstruct_full_weight(two).weight)

    def test_matches_nested_loops(self):
        rng = make_rng(6)
        params = random_params(rng, dims={T: 2, A: 3, V: 2}, d_h=2, rank=2)
        weight = reconstruct_full_weight(params).weight
        f = params.factors
        for h in range(2):
            for a in range(2):
                for b in range(3):
                    for c in range(2):
                        expected = sum(f[T][i, h, a] * f[A][i, h, b] * f[V][i, h, c] for i in range(2))
                        assert weight[h, a, b, c] == pytest.approx(expected, abs=1e-14)

    def test_size_guard(self):
        rng = make_rng(7)
        params = random_params(rng, dims={T: 100, A: 100, V: 100}, d_h=2, rank=1)
        with pytest.raises(ConfigError):
            reconstruct_full_weight(params)


class TestFullTensor:

    def test_one_hot_features_read_one_entry(self):
        oracle = FullFusionOracle(np.ones((2, 2, 2, 2)), np.zeros(2))
        e = np.array([1.0, 0.0])
        assert np.array_equal(fuse_via_full_tensor(e, e, e, oracle), [1.0, 1.0])

    def test_zero_text_returns_bias(self):
        rng = make_rng(8)
        bias = rng.normal(size=2)
        oracle = FullFusionOracle(rng.normal(size=(2, 3, 3, 3)), bias)
        out = fuse_via_full_tensor(np.zeros(3), rng.normal(size=3), rng.normal(size=3), oracle)
        assert np.array_equal(out, bias)

    def test_width_mismatch(self):
        oracle = FullFusionOracle(np.ones((2, 2, 2, 2)), np.zeros(2))
        with pytest.raises(DimensionError):
            fuse_via_full_tensor(np.ones(3), np.ones(2), np.ones(2), oracle)


class TestPredict:

    def test_zero_head_is_uniform(self):
        params = hand_params(np.ones((4, 2)), np.ones((4, 2)), np.ones((4, 2)))
        dist = predict(np.arange(4.0), params)
        assert np.allclose(dist.as_array(), 1.0 / 3.0, atol=1e-12)

    def test_large_turn_bias_saturates(self):
        head = MlpParams([np.zeros((3, 2))], [np.array([0.0, 1000.0, 0.0])])
        params = FusionParams({m: np.ones((1, 2, 2)) for m in MODALITIES}, head)
        dist = predict(np.ones(2), params)
        assert dist.p_turn == pytest.approx(1.0, abs=1e-12)

    def test_normalized_for_random_inputs(self):
        rng = make_rng(9)
        params = init_fusion({m: 3 for m in MODALITIES}, rng, fusion_dim=4, rank=2, head_sizes=(4, 5, 3))
        for _ in range(50):
            dist = predict(rng.normal(size=4) * 10, params)
            assert abs(dist.as_array().sum() - 1.0) < 1e-9

    def test_wrong_width(self):
        params = hand_params(np.ones((4, 2)), np.ones((4, 2)), np.ones((4, 2)))
        with pytest.raises(DimensionError):
            predict(np.ones(3), params)


class TestComposedGradients:

    @pytest.mark.parametrize("code", ["T", "A", "V", "TA", "TV", "AV", "TAV"])
    def test_every_mask_matches_finite_differences(self, code, tiny_bundle):
        mask = ModalityMask.parse(code)
        sample = make_sample(make_rng(10))

        def loss_fn(arrays):
            return joint_loss_and_grads(tiny_bundle.with_arrays(arrays), sample, mask)[0]

        _, _, grads = joint_loss_and_grads(tiny_bundle, sample, mask)
        for m in MODALITIES:
            has_grads = any(k.startswith(f"encoder.{m.value}.") for k in grads)
            assert has_grads == (m in mask)
            assert (f"fusion.factor.{m.value}" in grads) == (m in mask)
        assert finite_diff_check(loss_fn, tiny_bundle.arrays(), grads) < 1e-4

    def test_frozen_groups_are_left_out(self, tiny_bundle, tiny_sample):
        _, _, grads = joint_loss_and_grads(tiny_bundle, tiny_sample, ModalityMask.full(),
                                           train_encoders=False, train_factors=False)
        assert all(k.startswith("fusion.head.") for k in grads)

    def test_forward_cache_keeps_present_features_only(self):
        rng = make_rng(11)
        params = random_params(rng)
        mask = ModalityMask.of("TV")
        _, cache = fuse_forward(random_features(rng, params, mask), mask, params)
        assert set(cache.features) == {T, V}
