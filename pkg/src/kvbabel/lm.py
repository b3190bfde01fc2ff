"""Toy decoder-only transformer with exact k-v cache extraction.

The architecture family: grouped-query attention with rotary positions,
GeGLU feed-forward, RMS norms both before and after each sublayer, tied
input/output embeddings, global causal attention. Small configurations of
this model act as the pool members whose caches get translated.

Caches store post-rotary keys, so absolute positions are baked in; a suffix
decoded on top of a cache must start at the position right after it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, InputError
from .hashing import derive_seed
from .tensor import Rng, Tensor


@dataclass
class ModelConfig:
    vocab_size: int = 64
    d_model: int = 32
    num_layers: int = 2
    num_heads: int = 4
    num_kv_heads: int = 1
    head_dim: int = 8
    ff_dim: int = 128
    max_seq_len: int = 128
    rope_base: float = 10000.0

    def __post_init__(self):
        for name in (
            "vocab_size",
            "d_model",
            "num_layers",
            "num_heads",
            "num_kv_heads",
            "head_dim",
            "ff_dim",
            "max_seq_len",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_heads % self.num_kv_heads != 0:
            raise ConfigError(
                f"num_heads ({self.num_heads}) must be divisible by "
                f"num_kv_heads ({self.num_kv_heads})"
            )
        if self.head_dim % 2 != 0:
            raise ConfigError(f"head_dim must be even for rotary embedding, got {self.head_dim}")
        if self.rope_base <= 1.0:
            raise ConfigError(f"rope_base must exceed 1.0, got {self.rope_base}")

    @property
    def cache_width(self) -> int:
        """Per-layer k (or v) cache width D = num_kv_heads * head_dim."""
        return self.num_kv_heads * self.head_dim

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "num_kv_heads": self.num_kv_heads,
            "head_dim": self.head_dim,
            "ff_dim": self.ff_dim,
            "max_seq_len": self.max_seq_len,
            "rope_base": self.rope_base,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class KVCache:
    """Keys and values shaped B x S x L x D plus the absolute positions."""

    keys: Tensor
    values: Tensor
    positions: np.ndarray

    def __post_init__(self):
        if self.keys.shape != self.values.shape:
            raise ContractError(
                f"cache keys {self.keys.shape} and values {self.values.shape} differ"
            )
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.positions.shape != (self.keys.shape[1],):
            raise ContractError(
                f"positions length {self.positions.shape} does not match "
                f"cache sequence dim {self.keys.shape[1]}"
            )

    @property
    def seq_len(self) -> int:
        return self.keys.shape[1]

    def detach(self) -> "KVCache":
        return KVCache(self.keys.detach(), self.values.detach(), self.positions)


class LanguageModel:
    """Frozen-able parameter container plus its config."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor], frozen: bool = False):
        self.config = config
        self.params = params
        self.frozen = frozen

    def freeze(self) -> "LanguageModel":
        self.frozen = True
        for p in self.params.values():
            p.requires_grad = False
        return self

    def unfreeze(self) -> "LanguageModel":
        self.frozen = False
        for p in self.params.values():
            p.requires_grad = True
        return self

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, self.params[name]) for name in sorted(self.params)]

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def param_count(config: ModelConfig) -> int:
    """Closed-form parameter count for a config."""
    d, hd = config.d_model, config.head_dim
    attn = d * config.num_heads * hd * 2 + d * config.num_kv_heads * hd * 2
    ff = 3 * d * config.ff_dim
    norms = 4 * d
    per_layer = attn + ff + norms
    return config.vocab_size * d + config.num_layers * per_layer + d


def init_model(config: ModelConfig, seed: int) -> LanguageModel:
    """Deterministically initialize a model: scaled-normal linear maps
    (std 0.02), embedding std 1/sqrt(d_model), unit norm gains."""
    rng = Rng(derive_seed(seed, "model-init"))
    d, hd = config.d_model, config.head_dim
    h, kv, ff = config.num_heads, config.num_kv_heads, config.ff_dim

    params: dict[str, Tensor] = {}

    def linear(name: str, shape):
        params[name] = Tensor(rng.normal(shape, std=0.02), requires_grad=True)

    params["embed"] = Tensor(
        rng.normal((config.vocab_size, d), std=1.0 / np.sqrt(d)), requires_grad=True
    )
    for i in range(config.num_layers):
        p = f"layer{i}/"
        linear(p + "wq", (d, h * hd))
        linear(p + "wk", (d, kv * hd))
        linear(p + "wv", (d, kv * hd))
        linear(p + "wo", (h * hd, d))
        linear(p + "w_gate", (d, ff))
        linear(p + "w_up", (d, ff))
        linear(p + "w_down", (ff, d))
        for norm in ("pre_attn_norm", "post_attn_norm", "pre_ff_norm", "post_ff_norm"):
            params[p + norm] = Tensor(np.ones(d), requires_grad=True)
    params["final_norm"] = Tensor(np.ones(d), requires_grad=True)

    model = LanguageModel(config, params)
    assert model.param_count() == param_count(config)
    return model


def rope_tables(positions: np.ndarray, head_dim: int, base: float):
    """cos/sin tables of shape (S, head_dim) for half-split rotation."""
    freqs = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    ang = np.outer(np.asarray(positions, dtype=np.float64), freqs)
    cos = np.concatenate([np.cos(ang), np.cos(ang)], axis=-1)
    sin = np.concatenate([np.sin(ang), np.sin(ang)], axis=-1)
    return cos, sin


def _attention_view(block: Tensor, kv: int, hd: int) -> Tensor:
    """B x S x (kv*hd) -> B x kv x S x hd."""
    b, s, _ = block.shape
    return T.transpose(T.reshape(block, (b, s, kv, hd)), (0, 2, 1, 3))


def _storage_view(block: Tensor) -> Tensor:
    """B x kv x S x hd -> B x S x (kv*hd)."""
    b, kv, s, hd = block.shape
    return T.reshape(T.transpose(block, (0, 2, 1, 3)), (b, s, kv * hd))


def _decode(model: LanguageModel, h: Tensor, positions: np.ndarray, past: KVCache | None):
    """Run the transformer stack on embedded inputs.

    Returns (logits, new_keys, new_values) where the new cache tensors cover
    only the freshly processed positions, shaped B x T x L x D.
    """
    cfg = model.config
    p = model.params
    b, t, _ = h.shape
    n_past = past.seq_len if past is not None else 0
    s_tot = n_past + t
    kvh, nh, hd = cfg.num_kv_heads, cfg.num_heads, cfg.head_dim
    groups = nh // kvh

    cos, sin = rope_tables(positions, hd, cfg.rope_base)
    # additive causal mask: query t may see keys up to n_past + t
    j = np.arange(s_tot)
    i = np.arange(t)[:, None]
    mask = np.where(j[None, :] <= n_past + i, 0.0, -1e9).reshape(1, 1, 1, t, s_tot)

    new_k, new_v = [], []
    scale = 1.0 / np.sqrt(hd)
    for layer in range(cfg.num_layers):
        lp = f"layer{layer}/"
        x = T.rms_norm(h, p[lp + "pre_attn_norm"])
        q = _attention_view(T.matmul(x, p[lp + "wq"]), nh, hd)
        k = _attention_view(T.matmul(x, p[lp + "wk"]), kvh, hd)
        v = _attention_view(T.matmul(x, p[lp + "wv"]), kvh, hd)
        q = T.rope_rotate(q, cos, sin)
        k = T.rope_rotate(k, cos, sin)

        k_block = _storage_view(k)
        v_block = _storage_view(v)
        new_k.append(T.reshape(k_block, (b, t, 1, kvh * hd)))
        new_v.append(T.reshape(v_block, (b, t, 1, kvh * hd)))

        if past is not None:
            pk = _attention_view(T.select_index(past.keys, 2, layer), kvh, hd)
            pv = _attention_view(T.select_index(past.values, 2, layer), kvh, hd)
            k_att = T.concat([pk, k], axis=2)
            v_att = T.concat([pv, v], axis=2)
        else:
            k_att, v_att = k, v

        qg = T.reshape(q, (b, kvh, groups, t, hd))
        kt = T.reshape(T.transpose(k_att, (0, 1, 3, 2)), (b, kvh, 1, hd, s_tot))
        att = T.add(T.mul(T.matmul(qg, kt), scale), Tensor(mask))
        att = T.softmax_last(att)
        vv = T.reshape(v_att, (b, kvh, 1, s_tot, hd))
        o = T.matmul(att, vv)
        o = T.reshape(T.transpose(T.reshape(o, (b, nh, t, hd)), (0, 2, 1, 3)), (b, t, nh * hd))
        o = T.matmul(o, p[lp + "wo"])
        h = T.add(h, T.rms_norm(o, p[lp + "post_attn_norm"]))

        x = T.rms_norm(h, p[lp + "pre_ff_norm"])
        f = T.mul(T.gelu(T.matmul(x, p[lp + "w_gate"])), T.matmul(x, p[lp + "w_up"]))
        f = T.matmul(f, p[lp + "w_down"])
        h = T.add(h, T.rms_norm(f, p[lp + "post_ff_norm"]))

    h = T.rms_norm(h, p["final_norm"])
    # tied readout scaled by 1/sqrt(d_model) so an untrained model predicts
    # near-uniformly (initial logit std would otherwise be ~1)
    logits = T.mul(
        T.matmul(h, T.transpose(p["embed"], (1, 0))), 1.0 / np.sqrt(cfg.d_model)
    )
    keys = T.concat(new_k, axis=2)
    values = T.concat(new_v, axis=2)
    return logits, keys, values


def _check_tokens(model: LanguageModel, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise InputError(f"tokens must be 2-d (batch x seq), got shape {tokens.shape}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= model.config.vocab_size):
        raise InputError(f"token id out of range [0, {model.config.vocab_size})")
    return tokens


def forward(model: LanguageModel, tokens: np.ndarray):
    """Full causal forward pass. Returns (logits B x S x V, cache)."""
    tokens = _check_tokens(model, tokens)
    b, s = tokens.shape
    if s > model.config.max_seq_len:
        raise InputError(f"sequence length {s} exceeds max_seq_len {model.config.max_seq_len}")
    positions = np.arange(s)
    h = T.embedding(model.params["embed"], tokens)
    logits, keys, values = _decode(model, h, positions, None)
    return logits, KVCache(keys, values, positions)


def forward_with_prefix_cache(
    model: LanguageModel,
    cache: KVCache,
    suffix_tokens: np.ndarray,
    start_pos: int,
    return_cache: bool = False,
):
    """Decode suffix tokens on top of a prefix cache.

    ``start_pos`` must equal the cache length; suffix positions continue
    from there. Gradients flow through the supplied cache entries.
    """
    suffix_tokens = _check_tokens(model, suffix_tokens)
    if start_pos != cache.seq_len:
        raise ContractError(
            f"start_pos {start_pos} does not match cache length {cache.seq_len}"
        )
    b, t = suffix_tokens.shape
    if t == 0:
        logits = Tensor(np.zeros((b, 0, model.config.vocab_size)))
        return (logits, cache) if return_cache else logits
    if start_pos + t > model.config.max_seq_len:
        raise InputError(
            f"cache ({start_pos}) plus suffix ({t}) exceeds max_seq_len "
            f"{model.config.max_seq_len}"
        )
    positions = np.arange(start_pos, start_pos + t)
    h = T.embedding(model.params["embed"], suffix_tokens)
    logits, keys, values = _decode(model, h, positions, cache)
    if not return_cache:
        return logits
    new_cache = KVCache(
        T.concat([cache.keys, keys], axis=1),
        T.concat([cache.values, values], axis=1),
        np.concatenate([cache.positions, positions]),
    )
    return logits, new_cache


def forward_from_embeddings(
    model: LanguageModel,
    embeds: Tensor,
    start_pos: int = 0,
    prefix_cache: KVCache | None = None,
):
    """Forward pass on pre-embedded inputs (soft prompts). Returns
    (logits, cache-of-new-positions)."""
    b, t, d = embeds.shape
    if d != model.config.d_model:
        raise InputError(f"embedding width {d} does not match d_model {model.config.d_model}")
    if prefix_cache is not None and start_pos != prefix_cache.seq_len:
        raise ContractError(
            f"start_pos {start_pos} does not match cache length {prefix_cache.seq_len}"
        )
    positions = np.arange(start_pos, start_pos + t)
    logits, keys, values = _decode(model, embeds, positions, prefix_cache)
    return logits, KVCache(keys, values, positions)


def lm_loss(
    model: LanguageModel,
    tokens: np.ndarray,
    prefix_cache: KVCache | None = None,
    s: int = 0,
) -> Tensor:
    """Mean next-token NLL over the suffix after position ``s``.

    Targets are tokens s+1 .. tau-1; the first suffix token itself is never
    a target because a bare cache yields no logits for it. With
    ``prefix_cache`` the model never re-reads the prefix tokens.
    """
    tokens = np.asarray(tokens)
    b, tau = tokens.shape
    if not 0 <= s < tau:
        raise InputError(f"prefix split s={s} out of range for length {tau}")
    if tau <= s + 1:
        raise InputError(f"no suffix targets: tau={tau} <= s+1={s + 1}")
    targets = tokens[:, s + 1 :]
    mask = np.ones(targets.shape, dtype=bool)
    if prefix_cache is not None:
        if prefix_cache.seq_len != s:
            raise ContractError(
                f"prefix cache length {prefix_cache.seq_len} does not match s={s}"
            )
        logits = forward_with_prefix_cache(model, prefix_cache, tokens[:, s:], s)
        logits = T.slice_axis(logits, 1, 0, tau - s - 1)
    else:
        logits, _ = forward(model, tokens)
        logits = T.slice_axis(logits, 1, s, tau - 1)
    return T.softmax_cross_entropy(logits, targets, mask)


def sample_suffix(
    model: LanguageModel,
    cache: KVCache,
    last_tokens: np.ndarray,
    steps: int,
    rng: Rng,
):
    """Ancestral sampling of ``steps`` tokens after a cache.

    ``last_tokens`` (shape B) are the tokens at position cache.seq_len; the
    model is frozen so no graph is built. Returns sampled tokens B x steps.
    """
    b = last_tokens.shape[0]
    out = np.zeros((b, steps), dtype=np.int64)
    current = np.asarray(last_tokens).reshape(b, 1)
    for step in range(steps):
        logits, cache = forward_with_prefix_cache(
            model, cache, current, cache.seq_len, return_cache=True
        )
        row = logits.data[:, -1, :]
        z = row - row.max(axis=-1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=-1, keepdims=True)
        u = rng.uniform((b, 1))
        nxt = (u > np.cumsum(p, axis=-1)).sum(axis=-1)
        nxt = np.minimum(nxt, model.config.vocab_size - 1)
        out[:, step] = nxt
        current = nxt.reshape(b, 1)
    return out, cache
