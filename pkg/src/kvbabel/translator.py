"""Adapters that move k-v cache blocks into and out of a shared latent space.

Each pool member owns one adapter pair: the into-direction mixes layer-wise
cache information (B x S x L x D -> B x S x Q) and the out-direction
reconstructs layer structure (B x S x Q -> B x S x L x D). Keys and values
travel separately through the same cross-attention stack but use their own
input/output transforms. Identity and per-model linear maps are provided as
baselines with the same translation interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError, UnsupportedPairError
from .hashing import derive_seed
from .lm import KVCache, ModelConfig
from .tensor import Rng, Tensor


@dataclass
class TranslatorConfig:
    q_dim: int = 32
    embed_dim_factor: float = 2.0
    translation_dim_factor: float = 1.0
    xattn_num_heads: int = 4
    xattn_head_dim: int = 8
    # where the output transform puts its GELU: "mid" (norm, GELU, linear)
    # leaves the produced cache block unbounded; "last" (norm, linear, GELU)
    # mirrors the input transform literally but clips every output
    # coordinate below about -0.17, which real caches violate heavily
    output_activation: str = "mid"

    def __post_init__(self):
        if self.q_dim < 1:
            raise ConfigError(f"q_dim must be positive, got {self.q_dim}")
        if self.embed_dim_factor <= 0 or self.translation_dim_factor <= 0:
            raise ConfigError("dimension factors must be positive")
        if self.xattn_num_heads < 1 or self.xattn_head_dim < 1:
            raise ConfigError("cross-attention heads/dims must be positive")
        if self.output_activation not in ("mid", "last"):
            raise ConfigError(
                f"output_activation must be 'mid' or 'last', got {self.output_activation!r}"
            )

    def inner_dim(self, cache_width: int) -> int:
        """D' for a model whose per-layer cache width is D."""
        return max(1, round(self.embed_dim_factor * cache_width))

    def ff_dim(self, inner: int) -> int:
        return max(1, round(self.translation_dim_factor * inner))

    def to_dict(self) -> dict:
        return {
            "q_dim": self.q_dim,
            "embed_dim_factor": self.embed_dim_factor,
            "translation_dim_factor": self.translation_dim_factor,
            "xattn_num_heads": self.xattn_num_heads,
            "xattn_head_dim": self.xattn_head_dim,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TranslatorConfig":
        return cls(**d)


def validate_shared_width(q_dim: int, num_layers: int) -> None:
    """The shared width must split evenly across each member's layers."""
    if q_dim % num_layers != 0:
        raise ConfigError(
            f"shared width {q_dim} must be divisible by layer count "
            f"{num_layers} (Q mod L == 0)"
        )


@dataclass
class SharedLatentBlock:
    """A (k*, v*) pair living in the shared space, each B x S x Q."""

    k_star: Tensor
    v_star: Tensor

    def __post_init__(self):
        if self.k_star.shape != self.v_star.shape:
            raise ContractError(
                f"shared block halves disagree: {self.k_star.shape} vs {self.v_star.shape}"
            )


class Adapter:
    """One direction of a model's translation pair.

    ``direction`` is "into" (local cache -> shared) or "out" (shared ->
    local cache). The cross-attention stack depth equals the owning model's
    layer count; its parameters are shared between key and value blocks
    while the input and output transforms are block-type specific.
    """

    def __init__(
        self,
        direction: str,
        num_layers: int,
        cache_width: int,
        tconfig: TranslatorConfig,
        params: dict[str, Tensor],
    ):
        self.direction = direction
        self.num_layers = num_layers
        self.cache_width = cache_width
        self.tconfig = tconfig
        self.params = params

    @property
    def q_dim(self) -> int:
        return self.tconfig.q_dim

    @property
    def inner_dim(self) -> int:
        return self.tconfig.inner_dim(self.cache_width)

    def named_parameters(self, prefix: str = ""):
        return [(prefix + name, self.params[name]) for name in sorted(self.params)]

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def _init_adapter(
    direction: str,
    model_config: ModelConfig,
    tconfig: TranslatorConfig,
    rng: Rng,
) -> Adapter:
    L = model_config.num_layers
    d_block = model_config.cache_width
    d_in = d_block if direction == "into" else tconfig.q_dim // L
    d_inner = tconfig.inner_dim(d_block)
    d_ff = tconfig.ff_dim(d_inner)
    d_out = tconfig.q_dim if direction == "into" else L * d_block
    inner_attn = tconfig.xattn_num_heads * tconfig.xattn_head_dim

    params: dict[str, Tensor] = {}

    def linear(name, shape):
        # fan-in scaling keeps signals near unit size through the stack;
        # dimensions here are tiny, so the LM's flat 0.02 would underdrive
        params[name] = Tensor(
            rng.normal(shape, std=1.0 / np.sqrt(shape[0])), requires_grad=True
        )

    def norm(name, width, with_bias):
        params[name + "/gain"] = Tensor(np.ones(width), requires_grad=True)
        if with_bias:
            params[name + "/bias"] = Tensor(np.zeros(width), requires_grad=True)

    for kind in ("k", "v"):
        norm(f"in/{kind}/ln", d_in, with_bias=True)
        linear(f"in/{kind}/w", (d_in, d_inner))
        params[f"in/{kind}/b"] = Tensor(np.zeros(d_inner), requires_grad=True)
    for i in range(L):
        p = f"xa{i}/"
        linear(p + "wq", (d_inner, inner_attn))
        linear(p + "wk", (d_inner, inner_attn))
        linear(p + "wv", (d_inner, inner_attn))
        linear(p + "wo", (inner_attn, d_inner))
        linear(p + "w_gate", (d_inner, d_ff))
        linear(p + "w_up", (d_inner, d_ff))
        linear(p + "w_down", (d_ff, d_inner))
        for n in ("pre_norm", "post_norm", "ff_pre_norm", "ff_post_norm"):
            norm(p + n, d_inner, with_bias=False)
    for kind in ("k", "v"):
        norm(f"out/{kind}/ln", L * d_inner, with_bias=True)
        linear(f"out/{kind}/w", (L * d_inner, d_out))
        params[f"out/{kind}/b"] = Tensor(np.zeros(d_out), requires_grad=True)

    return Adapter(direction, L, d_block, tconfig, params)


class AdapterPair:
    """The two learned translators owned by one pool member."""

    def __init__(self, into_shared: Adapter, out_of_shared: Adapter):
        self.into_shared = into_shared
        self.out_of_shared = out_of_shared

    @property
    def q_dim(self) -> int:
        return self.into_shared.q_dim

    @property
    def num_layers(self) -> int:
        return self.into_shared.num_layers

    @property
    def cache_width(self) -> int:
        return self.into_shared.cache_width

    def named_parameters(self, prefix: str = ""):
        out = self.into_shared.named_parameters(prefix + "into/")
        out += self.out_of_shared.named_parameters(prefix + "out/")
        return out

    def param_count(self) -> int:
        return self.into_shared.param_count() + self.out_of_shared.param_count()

    def to_shared(self, cache: KVCache) -> SharedLatentBlock:
        k_star, v_star = _adapt_both(self.into_shared, cache.keys, cache.values)
        return SharedLatentBlock(k_star, v_star)

    def from_shared(self, block: SharedLatentBlock, positions) -> KVCache:
        keys, values = _adapt_both(self.out_of_shared, block.k_star, block.v_star)
        return KVCache(keys, values, positions)


def build_adapter_pair(
    model_config: ModelConfig, tconfig: TranslatorConfig, seed: int
) -> AdapterPair:
    """Deterministically construct one model's into/out adapter pair."""
    validate_shared_width(tconfig.q_dim, model_config.num_layers)
    rng_in = Rng(derive_seed(seed, "adapter-into"))
    rng_out = Rng(derive_seed(seed, "adapter-out"))
    return AdapterPair(
        _init_adapter("into", model_config, tconfig, rng_in),
        _init_adapter("out", model_config, tconfig, rng_out),
    )


def _cross_attention(h: Tensor, kv: Tensor, p: dict, prefix: str, cfg: TranslatorConfig):
    """Multi-head cross-attention: queries from h, keys/values from kv.

    No causal mask: translation aligns whole sequences position-wise, and
    positional information rides on the cached content itself.
    """
    b, s, _ = h.shape
    nh, hd = cfg.xattn_num_heads, cfg.xattn_head_dim

    def heads(x):
        return T.transpose(T.reshape(x, (b, s, nh, hd)), (0, 2, 1, 3))

    q = heads(T.matmul(h, p[prefix + "wq"]))
    k = heads(T.matmul(kv, p[prefix + "wk"]))
    v = heads(T.matmul(kv, p[prefix + "wv"]))
    att = T.softmax_last(T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd)))
    o = T.matmul(att, v)
    o = T.reshape(T.transpose(o, (0, 2, 1, 3)), (b, s, nh * hd))
    return T.matmul(o, p[prefix + "wo"])


def _xattn_layer(h: Tensor, kv: Tensor, p: dict, prefix: str, cfg: TranslatorConfig):
    a = _cross_attention(T.rms_norm(h, p[prefix + "pre_norm/gain"]), kv, p, prefix, cfg)
    h = T.add(h, T.rms_norm(a, p[prefix + "post_norm/gain"]))
    x = T.rms_norm(h, p[prefix + "ff_pre_norm/gain"])
    f = T.mul(T.gelu(T.matmul(x, p[prefix + "w_gate"])), T.matmul(x, p[prefix + "w_up"]))
    f = T.matmul(f, p[prefix + "w_down"])
    return T.add(h, T.rms_norm(f, p[prefix + "ff_post_norm/gain"]))


def _input_stage(adapter: Adapter, block: Tensor, kind: str) -> Tensor:
    """Validate, (reshape if out-direction), and apply the block-type
    specific input transform. Returns B x S x L x D'."""
    p = adapter.params
    L = adapter.num_layers
    tcfg = adapter.tconfig
    if adapter.direction == "out":
        if block.ndim != 3 or block.shape[-1] != tcfg.q_dim:
            raise ShapeError(
                f"out-adapter input transform expects B x S x Q=(..,..,{tcfg.q_dim}), "
                f"got {block.shape}"
            )
        b, s, _ = block.shape
        block = T.reshape(block, (b, s, L, tcfg.q_dim // L))
    else:
        if (
            block.ndim != 4
            or block.shape[2] != L
            or block.shape[3] != adapter.cache_width
        ):
            raise ShapeError(
                f"into-adapter input transform expects B x S x {L} x "
                f"{adapter.cache_width}, got {block.shape}"
            )
    x = T.layer_norm(block, p[f"in/{kind}/ln/gain"], p[f"in/{kind}/ln/bias"])
    return T.gelu(T.add(T.matmul(x, p[f"in/{kind}/w"]), p[f"in/{kind}/b"]))


def _stack_stage(adapter: Adapter, x: Tensor) -> Tensor:
    """The shared cross-attention stack over an input-transformed block.

    Layer i's queries come from layer i-1's output; its keys/values come
    from slice i of the input; slice 0 seeds the stack. Outputs of all
    layers concatenate to B x S x (L*D')."""
    p = adapter.params
    h = T.select_index(x, 2, 0)
    outs = []
    for i in range(adapter.num_layers):
        h = _xattn_layer(h, T.select_index(x, 2, i), p, f"xa{i}/", adapter.tconfig)
        outs.append(h)
    return T.concat_last(outs)


def _output_stage(adapter: Adapter, y: Tensor, kind: str) -> Tensor:
    p = adapter.params
    tcfg = adapter.tconfig
    y = T.layer_norm(y, p[f"out/{kind}/ln/gain"], p[f"out/{kind}/ln/bias"])
    if tcfg.output_activation == "last":
        y = T.gelu(T.add(T.matmul(y, p[f"out/{kind}/w"]), p[f"out/{kind}/b"]))
    else:
        y = T.add(T.matmul(T.gelu(y), p[f"out/{kind}/w"]), p[f"out/{kind}/b"])
    if adapter.direction == "out":
        b, s = y.shape[:2]
        return T.reshape(y, (b, s, adapter.num_layers, adapter.cache_width))
    return y


def adapt(adapter: Adapter, block: Tensor, kind: str) -> Tensor:
    """Run one cache block (keys or values) through one adapter direction.

    Pipeline: (reshape if out-direction) -> per-block-type input transform
    (layer norm, linear, GELU) -> L cross-attention layers, where layer i's
    queries come from layer i-1's output and its keys/values from slice i of
    the transformed input, seeded by slice 0 -> concat of all L layer
    outputs -> block-type output transform -> (reshape back if
    out-direction).
    """
    if kind not in ("k", "v"):
        raise ContractError(f"block kind must be 'k' or 'v', got {kind!r}")
    return _output_stage(adapter, _stack_stage(adapter, _input_stage(adapter, block, kind)), kind)


def _adapt_both(adapter: Adapter, k_block: Tensor, v_block: Tensor):
    """Run keys and values through one batched cross-attention pass.

    The stack's parameters are shared between the block types and rows do
    not interact, so stacking along the batch axis is exact while halving
    the per-op overhead.
    """
    k_in = _input_stage(adapter, k_block, "k")
    v_in = _input_stage(adapter, v_block, "v")
    both = T.concat([k_in, v_in], axis=0)
    y = _stack_stage(adapter, both)
    b = k_in.shape[0]
    k_y = T.slice_axis(y, 0, 0, b)
    v_y = T.slice_axis(y, 0, b, 2 * b)
    return _output_stage(adapter, k_y, "k"), _output_stage(adapter, v_y, "v")


def translate(src_cache: KVCache, src_pair, dst_pair) -> KVCache:
    """Move a cache through the shared space: source -> sigma -> target.

    Positions ride along unchanged; the target model continues decoding
    from the source's positions.
    """
    if src_pair.q_dim != dst_pair.q_dim:
        raise ContractError(
            f"adapter pairs disagree on shared width: {src_pair.q_dim} vs {dst_pair.q_dim}"
        )
    expect = (src_cache.keys.shape[2], src_cache.keys.shape[3])
    have = (src_pair.num_layers, src_pair.cache_width)
    if expect != have:
        raise ContractError(
            f"cache layer structure {expect} does not match source adapter {have}"
        )
    block = src_pair.to_shared(src_cache)
    return dst_pair.from_shared(block, src_cache.positions)


# -- baselines ---------------------------------------------------------------


def identity_baseline(src_cache: KVCache, dst_model_config: ModelConfig) -> KVCache:
    """Pass the cache through untouched; legal only when dimensions match."""
    _, _, L, D = src_cache.keys.shape
    if L != dst_model_config.num_layers or D != dst_model_config.cache_width:
        raise UnsupportedPairError(
            f"identity mapping needs matching cache dimensions: source "
            f"(L={L}, D={D}) vs target (L={dst_model_config.num_layers}, "
            f"D={dst_model_config.cache_width})"
        )
    return KVCache(src_cache.keys, src_cache.values, src_cache.positions)


@dataclass
class LinearPathParams:
    """Flattened-cache linear maps for one translation path: per block type,
    one matrix (L_i*D_i) x R into the shared width and one R x (L_j*D_j) out.

    ``target_layers`` names the (L_j, D_j) split of the output; by default
    the source structure is reused (same-geometry pairs).
    """

    k_in: Tensor
    k_out: Tensor
    v_in: Tensor
    v_out: Tensor
    target_layers: tuple | None = None


def linear_baseline(src_cache: KVCache, params: LinearPathParams) -> KVCache:
    """Layer-concatenated linear translation baseline."""
    b, s, L, D = src_cache.keys.shape
    flat_in = L * D
    if params.k_in.shape[0] != flat_in or params.v_in.shape[0] != flat_in:
        raise ShapeError(
            f"linear baseline input maps expect {flat_in} columns, got "
            f"{params.k_in.shape} / {params.v_in.shape}"
        )
    if params.k_in.shape[1] != params.k_out.shape[0] or params.v_in.shape[1] != params.v_out.shape[0]:
        raise ShapeError("linear baseline shared widths disagree between in and out maps")
    flat_out = params.k_out.shape[1]
    if params.v_out.shape[1] != flat_out:
        raise ShapeError("linear baseline k and v output widths disagree")
    lo, do = params.target_layers if params.target_layers is not None else (L, D)
    if lo * do != flat_out:
        raise ShapeError(
            f"target layer split {lo}x{do} does not factor output width {flat_out}"
        )

    def run(block, w_in, w_out):
        x = T.reshape(block, (b, s, flat_in))
        y = T.matmul(T.matmul(x, w_in), w_out)
        return T.reshape(y, (b, s, lo, do))

    keys = run(src_cache.keys, params.k_in, params.k_out)
    values = run(src_cache.values, params.v_in, params.v_out)
    return KVCache(keys, values, src_cache.positions)


class LinearAdapterPair:
    """Per-model linear maps into/out of a shared width R.

    Mirrors AdapterPair's interface so pools can swap translator kinds.
    The shared width defaults to 8x the flattened cache width, matching the
    upward projections the cross-attention translator is compared against.
    """

    def __init__(self, model_config: ModelConfig, shared_width: int, seed: int):
        L, D = model_config.num_layers, model_config.cache_width
        flat = L * D
        rng = Rng(derive_seed(seed, "linear-adapter"))
        self.num_layers = L
        self.cache_width = D
        self.q_dim = shared_width
        self.params: dict[str, Tensor] = {}
        for kind in ("k", "v"):
            self.params[f"into/{kind}"] = Tensor(
                rng.normal((flat, shared_width), std=0.02), requires_grad=True
            )
            self.params[f"out/{kind}"] = Tensor(
                rng.normal((shared_width, flat), std=0.02), requires_grad=True
            )

    def named_parameters(self, prefix: str = ""):
        return [(prefix + name, self.params[name]) for name in sorted(self.params)]

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def to_shared(self, cache: KVCache) -> SharedLatentBlock:
        b, s, L, D = cache.keys.shape
        flat = (b, s, L * D)
        return SharedLatentBlock(
            T.matmul(T.reshape(cache.keys, flat), self.params["into/k"]),
            T.matmul(T.reshape(cache.values, flat), self.params["into/v"]),
        )

    def from_shared(self, block: SharedLatentBlock, positions) -> KVCache:
        b, s, _ = block.k_star.shape
        L, D = self.num_layers, self.cache_width
        keys = T.reshape(T.matmul(block.k_star, self.params["out/k"]), (b, s, L, D))
        values = T.reshape(T.matmul(block.v_star, self.params["out/v"]), (b, s, L, D))
        return KVCache(keys, values, positions)


def linear_path_params(src_lin: LinearAdapterPair, dst_lin: LinearAdapterPair) -> LinearPathParams:
    """Compose two models' linear maps into explicit path parameters."""
    if src_lin.q_dim != dst_lin.q_dim:
        raise ContractError(
            f"linear pairs disagree on shared width: {src_lin.q_dim} vs {dst_lin.q_dim}"
        )
    return LinearPathParams(
        k_in=src_lin.params["into/k"],
        k_out=dst_lin.params["out/k"],
        v_in=src_lin.params["into/v"],
        v_out=dst_lin.params["out/v"],
        target_layers=(dst_lin.num_layers, dst_lin.cache_width),
    )


def default_linear_width(model_configs) -> int:
    """8x the largest flattened cache width in the pool."""
    return 8 * max(c.num_layers * c.cache_width for c in model_configs)
