"""Training losses over translation paths and path sampling.

A path is an ordered (source, target) pair; cyclic paths (i == i) are
legal and teach the shared space to round-trip a model's own cache. The
suffix language-modelling loss is the primary signal; the cache
reconstruction loss is optional and off by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, InputError
from .lm import KVCache, forward, lm_loss
from .tensor import Rng, Tensor
from .translator import translate


@dataclass(frozen=True)
class Path:
    src: int
    dst: int


@dataclass
class LossWeights:
    recon_weight: float = 0.0
    lm_weight: float = 1.0

    def __post_init__(self):
        if self.recon_weight < 0 or self.lm_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.recon_weight == 0 and self.lm_weight == 0:
            raise ConfigError("at least one loss weight must be positive")


def all_paths(num_models: int) -> list[Path]:
    """All N^2 single-hop paths in a fixed row-major order."""
    return [Path(i, j) for i in range(num_models) for j in range(num_models)]


def sample_paths(num_models: int, paths_per_step: int, rng: Rng) -> list[Path]:
    """Uniform sample without replacement from the N^2 paths."""
    n2 = num_models * num_models
    if not 1 <= paths_per_step <= n2:
        raise ConfigError(
            f"paths_per_step must lie in [1, {n2}], got {paths_per_step}"
        )
    idx = rng.choice(n2, size=paths_per_step, replace=False)
    return [Path(int(i) // num_models, int(i) % num_models) for i in idx]


def sample_from(candidates: list[Path], paths_per_step: int, rng: Rng) -> list[Path]:
    """Sample without replacement from an explicit candidate set."""
    if not 1 <= paths_per_step <= len(candidates):
        raise ConfigError(
            f"paths_per_step must lie in [1, {len(candidates)}], got {paths_per_step}"
        )
    idx = rng.choice(len(candidates), size=paths_per_step, replace=False)
    return [candidates[int(i)] for i in idx]


def recon_loss(path: Path, cache_src: KVCache, cache_dst_true: KVCache, adapters) -> Tensor:
    """Mean squared error between the translated cache and the target's own.

    Keys and values are pooled into one mean so the weight stays comparable
    across cache shapes. Both caches must come from the same text.
    """
    if cache_src.keys.shape[:2] != cache_dst_true.keys.shape[:2]:
        raise ContractError(
            f"source and target caches disagree on batch/sequence: "
            f"{cache_src.keys.shape} vs {cache_dst_true.keys.shape}"
        )
    translated = translate(cache_src, adapters[path.src], adapters[path.dst])
    if translated.keys.shape != cache_dst_true.keys.shape:
        raise ContractError(
            f"translated cache shape {translated.keys.shape} does not match "
            f"target cache {cache_dst_true.keys.shape}"
        )
    dk = T.sub(translated.keys, cache_dst_true.keys.detach())
    dv = T.sub(translated.values, cache_dst_true.values.detach())
    total = T.add(T.tsum(T.mul(dk, dk)), T.tsum(T.mul(dv, dv)))
    count = dk.size + dv.size
    return T.mul(total, 1.0 / count)


def suffix_lm_loss(
    path: Path,
    text: np.ndarray,
    s: int,
    pool,
    src_cache: KVCache | None = None,
) -> Tensor:
    """Cross entropy of the target model on text[s:] given a translated
    prefix cache from the source model.

    The source forward runs frozen (graph-free); gradients reach only the
    adapters. ``src_cache`` may be supplied to share one source forward
    across several paths in a step.
    """
    text = np.asarray(text)
    tau = text.shape[1]
    if not 0 < s < tau:
        raise InputError(f"prefix split s={s} out of range for length {tau}")
    src = pool.models[path.src]
    dst = pool.models[path.dst]
    if src_cache is None:
        _, src_cache = forward(src, text[:, :s])
    translated = translate(src_cache, pool.adapters[path.src], pool.adapters[path.dst])
    return lm_loss(dst, text, prefix_cache=translated, s=s)


def combined_step_loss(
    paths: list[Path],
    tokens: np.ndarray,
    s: int,
    weights: LossWeights,
    pool,
) -> Tensor:
    """Average over paths of lm_weight * L_LM + recon_weight * L_recon.

    Computation is fused across paths: each source's prefix cache and
    shared-space block are computed once, and paths with a common target
    run the out-adapter and suffix forward stacked along the batch axis
    (rows never interact, so the fused value equals the per-path mean).
    """
    if not paths:
        raise InputError("combined_step_loss needs at least one path")
    tokens = np.asarray(tokens)
    models, adapters = pool.models, pool.adapters

    src_caches: dict[int, KVCache] = {}
    shared: dict[int, object] = {}
    dst_true: dict[int, KVCache] = {}
    for p in paths:
        if p.src not in src_caches:
            _, src_caches[p.src] = forward(models[p.src], tokens[:, :s])
            shared[p.src] = adapters[p.src].to_shared(src_caches[p.src])
        if weights.recon_weight > 0 and p.dst not in dst_true:
            if p.dst in src_caches:
                dst_true[p.dst] = src_caches[p.dst]
            else:
                _, dst_true[p.dst] = forward(models[p.dst], tokens[:, :s])

    groups: dict[int, list[Path]] = {}
    for p in paths:
        groups.setdefault(p.dst, []).append(p)

    total: Tensor | None = None
    for dst, plist in groups.items():
        n = len(plist)
        if n == 1:
            block = shared[plist[0].src]
        else:
            from .translator import SharedLatentBlock

            block = SharedLatentBlock(
                T.concat([shared[p.src].k_star for p in plist], axis=0),
                T.concat([shared[p.src].v_star for p in plist], axis=0),
            )
        positions = src_caches[plist[0].src].positions
        cache = adapters[dst].from_shared(block, positions)

        term: Tensor | None = None
        if weights.lm_weight > 0:
            rep = np.tile(tokens, (n, 1)) if n > 1 else tokens
            term = T.mul(
                lm_loss(models[dst], rep, prefix_cache=cache, s=s), weights.lm_weight
            )
        if weights.recon_weight > 0:
            true = dst_true[dst]
            tk = true.keys.data if n == 1 else np.tile(true.keys.data, (n, 1, 1, 1))
            tv = true.values.data if n == 1 else np.tile(true.values.data, (n, 1, 1, 1))
            dk = T.sub(cache.keys, Tensor(tk))
            dv = T.sub(cache.values, Tensor(tv))
            mse = T.mul(
                T.add(T.tsum(T.mul(dk, dk)), T.tsum(T.mul(dv, dv))),
                1.0 / (dk.size + dv.size),
            )
            rec = T.mul(mse, weights.recon_weight)
            term = rec if term is None else T.add(term, rec)
        weighted = T.mul(term, float(n))
        total = weighted if total is None else T.add(total, weighted)
    return T.mul(total, 1.0 / len(paths))
