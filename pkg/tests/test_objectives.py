"""Tests for path sampling, the two training losses, and pools."""

import numpy as np
import pytest

from kvbabel import objectives as obj
from kvbabel import tensor as T
from kvbabel.errors import ConfigError, ContractError, InputError
from kvbabel.lm import KVCache, ModelConfig, forward, init_model, lm_loss
from kvbabel.objectives import (
    LossWeights,
    Path,
    all_paths,
    combined_step_loss,
    recon_loss,
    sample_from,
    sample_paths,
    suffix_lm_loss,
)
from kvbabel.pool import ModelPool, add_member, build_pool
from kvbabel.tensor import Rng, Tensor
from kvbabel.translator import SharedLatentBlock, TranslatorConfig, translate

TOY = ModelConfig()
TRANS = TranslatorConfig()


class PassThroughPair:
    """Identity adapter stub: flattens layers into the shared block and back."""

    def __init__(self, num_layers: int, cache_width: int):
        self.num_layers = num_layers
        self.cache_width = cache_width
        self.q_dim = num_layers * cache_width

    def named_parameters(self, prefix=""):
        return []

    def param_count(self):
        return 0

    def to_shared(self, cache):
        b, s, L, D = cache.keys.shape
        return SharedLatentBlock(
            T.reshape(cache.keys, (b, s, L * D)),
            T.reshape(cache.values, (b, s, L * D)),
        )

    def from_shared(self, block, positions):
        b, s, q = block.k_star.shape
        L, D = self.num_layers, self.cache_width
        return KVCache(
            T.reshape(block.k_star, (b, s, L, D)),
            T.reshape(block.v_star, (b, s, L, D)),
            positions,
        )


def make_pool(seeds, pool_seed=0, kind="xattn", tconfig=TRANS):
    models = [init_model(TOY, s).freeze() for s in seeds]
    return build_pool(models, tconfig, seed=pool_seed, kind=kind)


class TestPathSampling:
    def test_two_models_full_enumeration(self):
        paths = sample_paths(2, 4, Rng(1))
        assert set(paths) == {Path(0, 0), Path(0, 1), Path(1, 0), Path(1, 1)}

    def test_three_models_all_nine(self):
        paths = sample_paths(3, 9, Rng(2))
        assert set(paths) == set(all_paths(3))

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            sample_paths(2, 5, Rng(3))
        with pytest.raises(ConfigError):
            sample_paths(2, 0, Rng(3))

    def test_uniform_frequency(self):
        rng = Rng(4)
        counts = {p: 0 for p in all_paths(3)}
        draws = 10_000
        for _ in range(draws):
            for p in sample_paths(3, 2, rng):
                counts[p] += 1
        expect = draws * 2 / 9
        sigma = np.sqrt(draws * (2 / 9) * (7 / 9))
        for p, c in counts.items():
            assert abs(c - expect) < 3 * sigma, (p, c)

    def test_sample_from_candidates(self):
        cands = [Path(0, 1), Path(1, 0)]
        assert set(sample_from(cands, 2, Rng(5))) == set(cands)
        with pytest.raises(ConfigError):
            sample_from(cands, 3, Rng(5))


class TestReconLoss:
    def test_perfect_identity_stack_zero_loss(self):
        model = init_model(TOY, 30).freeze()
        tokens = Rng(31).integers(0, 64, (2, 12))
        _, cache = forward(model, tokens[:, :6])
        stub = PassThroughPair(2, 8)
        loss = recon_loss(Path(0, 0), cache, cache, [stub])
        assert loss.item() == 0.0

    def test_matches_naive_mse_oracle(self):
        pool = make_pool([40, 41], pool_seed=42)
        tokens = Rng(43).integers(0, 64, (2, 10))
        _, c0 = forward(pool.models[0], tokens[:, :5])
        _, c1 = forward(pool.models[1], tokens[:, :5])
        loss = recon_loss(Path(0, 1), c0, c1, pool.adapters).item()

        translated = translate(c0, pool.adapters[0], pool.adapters[1])
        total, count = 0.0, 0
        for a, b in ((translated.keys, c1.keys), (translated.values, c1.values)):
            for x, y in zip(a.data.reshape(-1), b.data.reshape(-1)):
                total += (x - y) ** 2
                count += 1
        assert abs(loss - total / count) < 1e-10

    def test_symmetric_for_identically_seeded_pool(self):
        # identical models AND identical adapter seeds: i->j mirrors j->i
        models = [init_model(TOY, 7).freeze(), init_model(TOY, 7).freeze()]
        adapters = [
            __import__("kvbabel.translator", fromlist=["build_adapter_pair"]).build_adapter_pair(TOY, TRANS, seed=9)
            for _ in range(2)
        ]
        pool = ModelPool(models=models, adapters=adapters, q_dim=TRANS.q_dim)
        tokens = Rng(44).integers(0, 64, (2, 8))
        _, c0 = forward(pool.models[0], tokens[:, :4])
        _, c1 = forward(pool.models[1], tokens[:, :4])
        fwd = recon_loss(Path(0, 1), c0, c1, pool.adapters).item()
        bwd = recon_loss(Path(1, 0), c1, c0, pool.adapters).item()
        assert abs(fwd - bwd) < 1e-12

    def test_shape_mismatch_contract(self):
        pool = make_pool([45, 46])
        tokens = Rng(47).integers(0, 64, (2, 12))
        _, c0 = forward(pool.models[0], tokens[:, :4])
        _, c1 = forward(pool.models[1], tokens[:, :6])
        with pytest.raises(ContractError):
            recon_loss(Path(0, 1), c0, c1, pool.adapters)


class TestSuffixLmLoss:
    def test_identity_shortcut_matches_own_cache(self):
        model = init_model(TOY, 50).freeze()
        stub = PassThroughPair(2, 8)
        pool = ModelPool(models=[model], adapters=[stub], q_dim=stub.q_dim)
        tokens = Rng(51).integers(0, 64, (2, 24))
        s = 10
        via_path = suffix_lm_loss(Path(0, 0), tokens, s, pool).item()
        _, cache = forward(model, tokens[:, :s])
        direct = lm_loss(model, tokens, prefix_cache=cache, s=s).item()
        assert abs(via_path - direct) < 1e-9

    def test_split_out_of_range(self):
        pool = make_pool([52, 53])
        tokens = Rng(54).integers(0, 64, (1, 8))
        with pytest.raises(InputError):
            suffix_lm_loss(Path(0, 1), tokens, 0, pool)
        with pytest.raises(InputError):
            suffix_lm_loss(Path(0, 1), tokens, 8, pool)

    def test_gradients_reach_adapters_not_models(self):
        pool = make_pool([55, 56], pool_seed=57)
        tokens = Rng(58).integers(0, 64, (2, 16))
        loss = suffix_lm_loss(Path(0, 1), tokens, 8, pool)
        loss.backward()
        grads = [t.grad for _, t in pool.named_adapter_parameters()]
        assert any(g is not None and np.abs(g).max() > 0 for g in grads)
        for m in pool.models:
            assert all(t.grad is None for _, t in m.named_parameters())


class TestCombinedStepLoss:
    def test_lm_only_gating_never_calls_recon(self, monkeypatch):
        calls = {"n": 0}
        real = obj.recon_loss

        def counting(*a, **k):
            calls["n"] += 1
            return real(*a, **k)

        monkeypatch.setattr(obj, "recon_loss", counting)
        pool = make_pool([60, 61])
        tokens = Rng(62).integers(0, 64, (2, 16))
        combined_step_loss(all_paths(2), tokens, 8, LossWeights(recon_weight=0.0), pool)
        assert calls["n"] == 0

    def test_pure_recon_gating_never_calls_lm(self, monkeypatch):
        calls = {"n": 0}
        real = obj.suffix_lm_loss

        def counting(*a, **k):
            calls["n"] += 1
            return real(*a, **k)

        monkeypatch.setattr(obj, "suffix_lm_loss", counting)
        pool = make_pool([63, 64])
        tokens = Rng(65).integers(0, 64, (2, 16))
        loss = combined_step_loss(
            all_paths(2), tokens, 8, LossWeights(recon_weight=1.0, lm_weight=0.0), pool
        )
        assert calls["n"] == 0
        assert np.isfinite(loss.item())

    def test_two_paths_average_of_singles(self):
        pool = make_pool([66, 67])
        tokens = Rng(68).integers(0, 64, (2, 16))
        w = LossWeights()
        paths = [Path(0, 1), Path(1, 0)]
        together = combined_step_loss(paths, tokens, 8, w, pool).item()
        singles = [
            combined_step_loss([p], tokens, 8, w, pool).item() for p in paths
        ]
        assert abs(together - sum(singles) / 2) < 1e-12

    def test_weights_validation(self):
        with pytest.raises(ConfigError):
            LossWeights(recon_weight=0.0, lm_weight=0.0)
        with pytest.raises(ConfigError):
            LossWeights(recon_weight=-1.0)


class TestPool:
    def test_unfrozen_model_rejected(self):
        models = [init_model(TOY, 70)]
        with pytest.raises(ContractError):
            build_pool(models, TRANS, seed=0)

    def test_q_constraint_checked_per_member(self):
        models = [init_model(TOY, 71).freeze(), init_model(ModelConfig(num_layers=3), 72).freeze()]
        with pytest.raises(ConfigError):
            build_pool(models, TranslatorConfig(q_dim=32), seed=0)

    def test_linear_growth_on_extension(self):
        pool = make_pool([73, 74], pool_seed=75)
        before_total = pool.adapter_param_total()
        snapshots = [
            {n: t.data.copy() for n, t in pair.named_parameters()}
            for pair in pool.adapters
        ]
        new_model = init_model(TOY, 76).freeze()
        bigger = add_member(pool, new_model, TRANS, seed=77)
        assert bigger.adapter_param_total() == before_total + bigger.adapters[-1].param_count()
        assert bigger.trainable == [False, False, True]
        for snap, pair in zip(snapshots, bigger.adapters[:2]):
            for n, t in pair.named_parameters():
                assert np.array_equal(snap[n], t.data)

    def test_trainable_mask_filters_parameters(self):
        pool = make_pool([78, 79])
        pool.trainable = [False, True]
        names = [n for n, _ in pool.named_adapter_parameters()]
        assert names and all(n.startswith("adapter1/") for n in names)
