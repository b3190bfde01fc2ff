"""Tests for the cache translation adapters and baselines."""

import numpy as np
import pytest

from kvbabel import tensor as T
from kvbabel.errors import ConfigError, ContractError, ShapeError, UnsupportedPairError
from kvbabel.lm import KVCache, ModelConfig, forward, init_model
from kvbabel.translator import (
    AdapterPair,
    LinearAdapterPair,
    LinearPathParams,
    TranslatorConfig,
    adapt,
    build_adapter_pair,
    default_linear_width,
    identity_baseline,
    linear_baseline,
    linear_path_params,
    translate,
    validate_shared_width,
)
from kvbabel.tensor import Rng, Tensor

TOY_MODEL = ModelConfig()  # L=2, cache width 8
TOY_TRANS = TranslatorConfig()  # Q=32, embed factor 2, heads 4 x 8


def random_cache(rng: Rng, b: int, s: int, L: int, D: int) -> KVCache:
    return KVCache(
        Tensor(rng.normal((b, s, L, D))),
        Tensor(rng.normal((b, s, L, D))),
        np.arange(s),
    )


def symbolic_pair_count(L: int, D: int, Q: int, embed_factor: float,
                        trans_factor: float, heads: int, head_dim: int) -> int:
    """Independent closed-form parameter count for one adapter pair."""
    d_inner = round(embed_factor * D)
    d_ff = round(trans_factor * d_inner)
    inner_attn = heads * head_dim

    def one_direction(d_in, d_out):
        total = 0
        # two input transforms (k, v): layer norm gain+bias, linear, bias
        total += 2 * (2 * d_in + d_in * d_inner + d_inner)
        # shared cross-attention stack
        per_layer = (
            3 * d_inner * inner_attn      # wq, wk, wv
            + inner_attn * d_inner        # wo
            + 3 * d_inner * d_ff          # GeGLU
            + 4 * d_inner                 # four rms gains
        )
        total += L * per_layer
        # two output transforms: layer norm over L*d_inner, linear, bias
        total += 2 * (2 * L * d_inner + L * d_inner * d_out + d_out)
        return total

    return one_direction(D, Q) + one_direction(Q // L, L * D)


class TestConstruction:
    def test_q_mod_l_constraint(self):
        with pytest.raises(ConfigError) as exc:
            build_adapter_pair(
                ModelConfig(num_layers=3), TranslatorConfig(q_dim=32), seed=0
            )
        assert "Q mod L" in str(exc.value)

    def test_validate_shared_width_passes(self):
        validate_shared_width(32, 2)
        validate_shared_width(32, 4)

    def test_deterministic_init(self):
        p1 = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=5)
        p2 = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=5)
        for (n1, t1), (n2, t2) in zip(p1.named_parameters(), p2.named_parameters()):
            assert n1 == n2 and np.array_equal(t1.data, t2.data)

    def test_param_count_matches_symbolic_oracle(self):
        pair = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=1)
        expected = symbolic_pair_count(
            L=2, D=8, Q=32, embed_factor=2.0, trans_factor=1.0, heads=4, head_dim=8
        )
        assert pair.param_count() == expected

    def test_linear_parameter_growth(self):
        # adding one model adds exactly one pair; nothing else changes
        pairs = [build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=i) for i in range(3)]
        total3 = sum(p.param_count() for p in pairs)
        new_pair = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=3)
        before = [
            {n: t.data.copy() for n, t in p.named_parameters()} for p in pairs
        ]
        total4 = total3 + new_pair.param_count()
        assert total4 == sum(p.param_count() for p in pairs + [new_pair])
        for snap, p in zip(before, pairs):
            for n, t in p.named_parameters():
                assert np.array_equal(snap[n], t.data)

    def test_paper_scale_adapter_is_about_quarter_of_base(self):
        # 200M-class config: d_model 960, 8 layers, 4 heads over 1 kv head,
        # GeGLU hidden 7680 (the two gate/up mats together span 15360)
        base = ModelConfig(
            vocab_size=256, d_model=960, num_layers=8, num_heads=4,
            num_kv_heads=1, head_dim=240, ff_dim=7680, max_seq_len=512,
        )
        non_embedding = (
            base.num_layers
            * (
                base.d_model * base.num_heads * base.head_dim * 2
                + base.d_model * base.num_kv_heads * base.head_dim * 2
                + 3 * base.d_model * base.ff_dim
                + 4 * base.d_model
            )
        )
        assert 190e6 < non_embedding < 210e6  # the 200M-class reference point
        per_adapter = symbolic_pair_count(
            L=8, D=240, Q=1920, embed_factor=2.0, trans_factor=1.0,
            heads=32, head_dim=64,
        ) / 2
        ratio = per_adapter / non_embedding
        assert 0.125 < ratio < 0.45  # "about a quarter" with sweep slack


class TestAdapt:
    def test_into_shape_contract(self):
        pair = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=2)
        block = Tensor(Rng(1).normal((1, 4, 2, 8)))
        out = adapt(pair.into_shared, block, "k")
        assert out.shape == (1, 4, 32)

    def test_out_shape_contract(self):
        pair = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=3)
        block = Tensor(Rng(2).normal((1, 4, 32)))
        out = adapt(pair.out_of_shared, block, "k")
        assert out.shape == (1, 4, 2, 8)

    def test_shape_violation_names_stage(self):
        pair = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=4)
        with pytest.raises(ShapeError) as exc:
            adapt(pair.into_shared, Tensor(np.zeros((1, 4, 3, 8))), "k")
        assert "input transform" in str(exc.value)

    def test_all_parameter_groups_receive_gradient(self):
        pair = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=5)
        cache = random_cache(Rng(3), 2, 5, 2, 8)
        out = translate(cache, pair, pair)
        loss = T.tsum(T.mul(out.keys, out.keys)) + T.tsum(T.mul(out.values, out.values))
        loss.backward()
        dead = [n for n, t in pair.named_parameters() if t.grad is None or np.all(t.grad == 0)]
        assert dead == []

    def test_round_trip_shape(self):
        pair = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=6)
        cache = random_cache(Rng(4), 3, 7, 2, 8)
        out = translate(cache, pair, pair)
        assert out.keys.shape == cache.keys.shape
        assert out.values.shape == cache.values.shape
        assert np.array_equal(out.positions, cache.positions)


class TestParameterSharing:
    def test_xattn_weight_touches_both_block_types(self):
        pair = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=7)
        cache = random_cache(Rng(5), 1, 4, 2, 8)
        base = pair.to_shared(cache)
        pair.into_shared.params["xa0/wq"].data[0, 0] += 0.5
        bumped = pair.to_shared(cache)
        assert np.abs(bumped.k_star.data - base.k_star.data).max() > 0
        assert np.abs(bumped.v_star.data - base.v_star.data).max() > 0

    def test_key_input_linear_touches_only_key_path(self):
        pair = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=8)
        cache = random_cache(Rng(6), 1, 4, 2, 8)
        base = pair.to_shared(cache)
        pair.into_shared.params["in/k/w"].data[0, 0] += 0.5
        bumped = pair.to_shared(cache)
        assert np.abs(bumped.k_star.data - base.k_star.data).max() > 0
        assert np.array_equal(bumped.v_star.data, base.v_star.data)


class TestIdentityBaseline:
    def test_identity_passthrough(self):
        cache = random_cache(Rng(7), 1, 5, 2, 8)
        out = identity_baseline(cache, TOY_MODEL)
        assert np.array_equal(out.keys.data, cache.keys.data)
        assert np.array_equal(out.values.data, cache.values.data)

    def test_mismatched_layers_rejected(self):
        cache = random_cache(Rng(8), 1, 5, 2, 8)
        with pytest.raises(UnsupportedPairError):
            identity_baseline(cache, ModelConfig(num_layers=4))

    def test_identity_on_own_cache_matches_no_translation(self):
        from kvbabel.lm import lm_loss

        model = init_model(TOY_MODEL, 9).freeze()
        tokens = Rng(9).integers(0, 64, (2, 16))
        _, cache = forward(model, tokens[:, :6])
        direct = lm_loss(model, tokens, prefix_cache=cache, s=6).item()
        via_identity = lm_loss(
            model, tokens, prefix_cache=identity_baseline(cache, TOY_MODEL), s=6
        ).item()
        assert abs(direct - via_identity) < 1e-12


class TestLinearBaseline:
    def test_identity_matrices_are_identity_map(self):
        cache = random_cache(Rng(10), 1, 4, 2, 8)
        eye = Tensor(np.eye(16))
        params = LinearPathParams(k_in=eye, k_out=eye, v_in=eye, v_out=eye)
        out = linear_baseline(cache, params)
        np.testing.assert_allclose(out.keys.data, cache.keys.data, atol=1e-12)
        np.testing.assert_allclose(out.values.data, cache.values.data, atol=1e-12)

    def test_shape_pipeline(self):
        cache = random_cache(Rng(11), 1, 4, 2, 8)
        rng = Rng(12)
        params = LinearPathParams(
            k_in=Tensor(rng.normal((16, 128))),
            k_out=Tensor(rng.normal((128, 16))),
            v_in=Tensor(rng.normal((16, 128))),
            v_out=Tensor(rng.normal((128, 16))),
        )
        out = linear_baseline(cache, params)
        assert out.keys.shape == (1, 4, 2, 8)

    def test_default_width_is_8x_largest(self):
        cfgs = [ModelConfig(num_layers=2), ModelConfig(num_layers=4)]
        assert default_linear_width(cfgs) == 8 * 4 * 8

    def test_pairwise_composition(self):
        small = ModelConfig(num_layers=2)
        big = ModelConfig(num_layers=4)
        width = default_linear_width([small, big])
        lin_a = LinearAdapterPair(small, width, seed=1)
        lin_b = LinearAdapterPair(big, width, seed=2)
        cache = random_cache(Rng(13), 2, 4, 2, 8)
        out = linear_baseline(cache, linear_path_params(lin_a, lin_b))
        assert out.keys.shape == (2, 4, 4, 8)
        via_pair = translate(cache, lin_a, lin_b)
        np.testing.assert_allclose(out.keys.data, via_pair.keys.data, atol=1e-12)

    def test_mismatched_input_width(self):
        cache = random_cache(Rng(14), 1, 4, 2, 8)
        bad = LinearPathParams(
            k_in=Tensor(np.zeros((10, 4))), k_out=Tensor(np.zeros((4, 16))),
            v_in=Tensor(np.zeros((16, 4))), v_out=Tensor(np.zeros((4, 16))),
        )
        with pytest.raises(ShapeError):
            linear_baseline(cache, bad)


class TestTranslate:
    def test_untrained_translation_loss_near_uniform(self):
        from kvbabel.lm import lm_loss

        m1 = init_model(TOY_MODEL, 20).freeze()
        m2 = init_model(TOY_MODEL, 21).freeze()
        p1 = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=22)
        p2 = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=23)
        tokens = Rng(24).integers(0, 64, (8, 48))
        s = 24
        _, cache = forward(m1, tokens[:, :s])
        loss = lm_loss(m2, tokens, prefix_cache=translate(cache, p1, p2), s=s).item()
        assert abs(loss - np.log(64)) / np.log(64) < 0.20

    def test_pool_membership_mismatch(self):
        pair_a = build_adapter_pair(TOY_MODEL, TranslatorConfig(q_dim=32), seed=1)
        pair_b = build_adapter_pair(TOY_MODEL, TranslatorConfig(q_dim=16), seed=2)
        cache = random_cache(Rng(15), 1, 4, 2, 8)
        with pytest.raises(ContractError):
            translate(cache, pair_a, pair_b)

    def test_gradient_flows_only_into_adapters_not_frozen_models(self):
        from kvbabel.lm import lm_loss

        m1 = init_model(TOY_MODEL, 25).freeze()
        m2 = init_model(TOY_MODEL, 26).freeze()
        p1 = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=27)
        p2 = build_adapter_pair(TOY_MODEL, TOY_TRANS, seed=28)
        tokens = Rng(29).integers(0, 64, (2, 16))
        _, cache = forward(m1, tokens[:, :8])
        loss = lm_loss(m2, tokens, prefix_cache=translate(cache, p1, p2), s=8)
        loss.backward()
        assert all(t.grad is None for _, t in m1.named_parameters())
        assert all(t.grad is None for _, t in m2.named_parameters())
        touched = [t for _, t in p1.named_parameters() if t.grad is not None]
        assert touched  # source into-adapter received gradient
        assert any(
            t.grad is not None and np.abs(t.grad).max() > 0
            for _, t in p2.named_parameters()
        )


class TestCapacityScaling:
    def test_inner_dim_follows_embed_factor(self):
        assert TranslatorConfig(embed_dim_factor=1.0).inner_dim(8) == 8
        assert TranslatorConfig(embed_dim_factor=2.0).inner_dim(8) == 16
        assert TranslatorConfig(embed_dim_factor=4.0).inner_dim(8) == 32

    def test_param_count_grows_with_embed_factor(self):
        counts = [
            build_adapter_pair(TOY_MODEL, TranslatorConfig(embed_dim_factor=f), 0).param_count()
            for f in (1.0, 2.0, 4.0)
        ]
        assert counts[0] < counts[1] < counts[2]
