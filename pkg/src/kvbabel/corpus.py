"""Deterministic synthetic corpora: Markov-chain "languages", parallel
corpora related by a cipher, prompt-recovery tasks, and batching.

Every language is an order-k Markov chain over one shared symbol vocabulary;
the transition table is a pure function of the spec, and all sampling is a
pure function of (spec, seed). Generated streams can be cached on disk with
a spec hash so stale caches regenerate themselves.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .hashing import derive_seed, fnv1a64
from .lm import LanguageModel, forward, sample_suffix
from .tensor import Rng

_CORPUS_MAGIC = b"KVCC"
_CORPUS_VERSION = 1


@dataclass(frozen=True)
class LanguageSpec:
    """One synthetic language: a seeded order-k Markov process with a
    long-range echo.

    Each token follows the seeded order-k transition table, except that the
    symbol obtained by pushing the token ``echo_period`` positions back
    through a seeded per-language cipher gets its logit raised by
    ``echo_boost``. The echo is what makes a prefix genuinely predictive of
    its suffix: without it, teacher-forced suffix positions see all the
    Markov context they need after ``order`` tokens and a prefix cache
    would carry almost no usable signal. Experiments set ``echo_period``
    equal to their prefix length so every suffix position references prefix
    content through the cache.
    """

    vocab: tuple = tuple(range(64))
    transition_seed: int = 0
    order: int = 2
    temperature: float = 1.0
    echo_period: int = 32
    echo_boost: float = 4.0

    def __post_init__(self):
        if len(self.vocab) == 0:
            raise ConfigError("language vocab must not be empty")
        if tuple(self.vocab) != tuple(range(len(self.vocab))):
            raise ConfigError("vocab must be the contiguous symbols 0..V-1")
        if self.order < 1:
            raise ConfigError(f"Markov order must be >= 1, got {self.order}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.echo_period < 1:
            raise ConfigError(f"echo_period must be positive, got {self.echo_period}")
        if self.echo_boost < 0:
            raise ConfigError(f"echo_boost must be non-negative, got {self.echo_boost}")

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "transition_seed": self.transition_seed,
            "order": self.order,
            "temperature": self.temperature,
            "echo_period": self.echo_period,
            "echo_boost": self.echo_boost,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LanguageSpec":
        return cls(
            vocab=tuple(range(d["vocab_size"])),
            transition_seed=d["transition_seed"],
            order=d["order"],
            temperature=d["temperature"],
            echo_period=d.get("echo_period", 32),
            echo_boost=d.get("echo_boost", 4.0),
        )


def echo_cipher(spec: LanguageSpec) -> np.ndarray:
    """The seeded symbol permutation applied by the language's echo."""
    return Rng(derive_seed(spec.transition_seed, "echo-cipher")).permutation(
        spec.vocab_size
    )


_TABLE_CACHE: dict[tuple, np.ndarray] = {}


def transition_table(spec: LanguageSpec) -> np.ndarray:
    """(V^order, V) conditional distributions: softmax of seeded gaussians
    plus a per-language symbol bias, so languages differ in their marginal
    symbol statistics and not just in higher-order structure."""
    key = (spec.vocab_size, spec.transition_seed, spec.order, spec.temperature)
    cached = _TABLE_CACHE.get(key)
    if cached is not None:
        return cached
    v = spec.vocab_size
    rng = Rng(derive_seed(spec.transition_seed, "transitions"))
    z = rng.normal((v**spec.order, v))
    bias = Rng(derive_seed(spec.transition_seed, "symbol-bias")).normal((v,), std=1.5)
    z = (z + bias) / spec.temperature
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    _TABLE_CACHE[key] = p
    return p


def gen_corpus(spec: LanguageSpec, num_tokens: int, seed: int) -> np.ndarray:
    """Sample a token stream from the language. Pure in (spec, seed)."""
    if num_tokens < 1:
        raise InputError(f"num_tokens must be positive, got {num_tokens}")
    v = spec.vocab_size
    cum = np.cumsum(transition_table(spec), axis=1)
    cipher = echo_cipher(spec)
    rng = Rng(derive_seed(seed, "corpus"))
    out = np.empty(num_tokens, dtype=np.int64)
    boot = rng.integers(0, v, (spec.order,))
    n_boot = min(spec.order, num_tokens)
    out[:n_boot] = boot[:n_boot]
    if num_tokens <= spec.order:
        return out
    us = rng.uniform((num_tokens - spec.order,))
    idx = 0
    for c in boot:
        idx = idx * v + int(c)
    mod = v ** (spec.order - 1)
    period = spec.echo_period
    boost = float(np.exp(spec.echo_boost))
    table = transition_table(spec)
    for t in range(spec.order, num_tokens):
        u = us[t - spec.order]
        if boost > 1.0 and t >= period:
            row = table[idx].copy()
            row[cipher[out[t - period]]] *= boost
            row_cum = np.cumsum(row)
            nxt = int(np.searchsorted(row_cum, u * row_cum[-1], side="right"))
        else:
            nxt = int(np.searchsorted(cum[idx], u, side="right"))
        out[t] = min(nxt, v - 1)
        idx = (idx % mod) * v + out[t]
    return out


# -- parallel corpora ----------------------------------------------------------


@dataclass
class ParallelPair:
    """A source sequence and its deterministically transformed twin."""

    src_text: np.ndarray
    dst_text: np.ndarray
    alignment: str = "weak"


def _pair_cipher(spec_src: LanguageSpec, spec_dst: LanguageSpec) -> np.ndarray:
    seed = derive_seed(spec_src.transition_seed, f"cipher->{spec_dst.transition_seed}")
    return Rng(seed).permutation(spec_src.vocab_size)


def _local_reorder(tokens: np.ndarray, block: int = 4) -> np.ndarray:
    """Reverse each length-``block`` run of positions (an involution)."""
    out = tokens.copy()
    n = tokens.shape[-1]
    for start in range(0, n - n % block, block):
        out[..., start : start + block] = out[..., start : start + block][..., ::-1]
    return out


def parallel_transform(tokens: np.ndarray, spec_src: LanguageSpec, spec_dst: LanguageSpec) -> np.ndarray:
    """dst = cipher(reorder(src)): bijective symbol map after local reorder."""
    return _pair_cipher(spec_src, spec_dst)[_local_reorder(tokens)]


def parallel_inverse(tokens: np.ndarray, spec_src: LanguageSpec, spec_dst: LanguageSpec) -> np.ndarray:
    perm = _pair_cipher(spec_src, spec_dst)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    return _local_reorder(inverse[tokens])


def gen_parallel(
    spec_src: LanguageSpec,
    spec_dst: LanguageSpec,
    num_pairs: int,
    seq_len: int,
    seed: int,
) -> list[ParallelPair]:
    """Weakly aligned pairs: each target is the transformed source sequence."""
    if seq_len < 2:
        raise ConfigError(f"seq_len must be at least 2, got {seq_len}")
    if spec_src.vocab_size != spec_dst.vocab_size:
        raise ConfigError("parallel languages must share one vocabulary")
    stream = gen_corpus(spec_src, num_pairs * seq_len, seed)
    src = stream.reshape(num_pairs, seq_len)
    dst = parallel_transform(src, spec_src, spec_dst)
    return [ParallelPair(src[i], dst[i]) for i in range(num_pairs)]


def mixed_parallel_tokens(pairs: list[ParallelPair], prefix_len: int) -> np.ndarray:
    """Source-language prefix glued to the target-language suffix.

    This is the weak alignment used for cross-language training: the target
    simply skips the first prefix_len tokens and continues in its language.
    """
    src = np.stack([p.src_text for p in pairs])
    dst = np.stack([p.dst_text for p in pairs])
    if not 0 < prefix_len < src.shape[1]:
        raise InputError(f"prefix_len {prefix_len} out of range for {src.shape[1]}")
    return np.concatenate([src[:, :prefix_len], dst[:, prefix_len:]], axis=1)


# -- prompt-recovery tasks -------------------------------------------------------


@dataclass
class PromptTask:
    """Completions from a hidden context; the context itself stays hidden
    from the learner and exists only for oracle comparisons."""

    task_id: int
    train_completions: np.ndarray
    eval_completions: np.ndarray
    hidden_context: np.ndarray


def gen_prompt_tasks(
    generator_model: LanguageModel,
    num_tasks: int,
    completions_per_task: int = 32,
    completion_len: int = 24,
    eval_holdout: int = 8,
    seed: int = 0,
    context_len: int = 16,
) -> list[PromptTask]:
    """Sample prompt-recovery tasks from a frozen generator model.

    Per task: draw a hidden context, ancestrally sample completions from the
    generator conditioned on it, and split them into disjoint train/eval
    sets (duplicates are discarded before splitting).
    """
    if not generator_model.frozen:
        raise ConfigError("generator model must be frozen")
    if eval_holdout >= completions_per_task:
        raise ConfigError(
            f"eval holdout {eval_holdout} must be smaller than "
            f"completions_per_task {completions_per_task}"
        )
    v = generator_model.config.vocab_size
    tasks = []
    for t in range(num_tasks):
        rng = Rng(derive_seed(seed, f"prompt-task{t}"))
        context = rng.integers(0, v, (context_len,))
        rows: list[np.ndarray] = []
        seen: set[bytes] = set()
        for attempt in range(8):
            want = completions_per_task - len(rows)
            if want == 0:
                break
            draw = max(want * 2, 8)
            ctx = np.tile(context, (draw, 1))
            _, cache = forward(generator_model, ctx[:, :-1])
            sampled, _ = sample_suffix(
                generator_model, cache, ctx[:, -1], completion_len,
                rng.derive(f"draw{attempt}"),
            )
            for row in sampled:
                key = row.tobytes()
                if key not in seen:
                    seen.add(key)
                    rows.append(row)
                if len(rows) == completions_per_task:
                    break
        if len(rows) < completions_per_task:
            raise InputError(
                f"task {t}: generator too peaked to produce "
                f"{completions_per_task} distinct completions"
            )
        completions = np.stack(rows)
        tasks.append(
            PromptTask(
                task_id=t,
                train_completions=completions[eval_holdout:],
                eval_completions=completions[:eval_holdout],
                hidden_context=context,
            )
        )
    return tasks


def mixture_stream(
    specs: list[LanguageSpec],
    weights: list[float],
    num_tokens: int,
    window: int,
    seed: int,
) -> np.ndarray:
    """Interleave window-aligned chunks from several languages.

    Each window-sized slot is drawn from one language with the given
    weights, so downstream batching (which cuts at window boundaries) sees
    single-language windows, mirroring a multilingual corpus of documents.
    """
    if len(specs) != len(weights) or not specs:
        raise ConfigError("mixture needs matching, non-empty specs and weights")
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any() or w.sum() <= 0:
        raise ConfigError("mixture weights must be non-negative and not all zero")
    w = w / w.sum()
    slots = num_tokens // window
    if slots < 1:
        raise InputError(f"num_tokens {num_tokens} below one window of {window}")
    rng = Rng(derive_seed(seed, "mixture"))
    picks = (rng.uniform((slots,))[:, None] > np.cumsum(w)[None, :]).sum(axis=1)
    out = np.empty(slots * window, dtype=np.int64)
    for i, spec in enumerate(specs):
        count = int((picks == i).sum())
        if count == 0:
            continue
        stream = gen_corpus(spec, count * window, derive_seed(seed, f"mixture-lang{i}"))
        chunks = stream.reshape(count, window)
        slots_i = np.flatnonzero(picks == i)
        for j, slot in enumerate(slots_i):
            out[slot * window : (slot + 1) * window] = chunks[j]
    return out


# -- batching ---------------------------------------------------------------------


def make_batches(
    stream: np.ndarray,
    batch_size: int,
    seq_len: int,
    prefix_len: int,
    seed: int,
):
    """Infinite iterator of (tokens B x seq_len, prefix_len).

    The stream splits into non-overlapping windows; each epoch visits every
    window at most once in a fresh seeded shuffle, then wraps around.
    """
    if prefix_len >= seq_len:
        raise ConfigError(f"prefix_len {prefix_len} must be below seq_len {seq_len}")
    stream = np.asarray(stream)
    window_count = stream.shape[0] // seq_len
    if window_count < 1:
        raise InputError(
            f"stream of {stream.shape[0]} tokens is shorter than one "
            f"window of {seq_len}"
        )
    windows = stream[: window_count * seq_len].reshape(window_count, seq_len)
    rng = Rng(derive_seed(seed, "batches"))
    step = min(batch_size, window_count)
    while True:
        perm = rng.permutation(window_count)
        for start in range(0, window_count - step + 1, step):
            yield windows[perm[start : start + step]], prefix_len


def eval_windows(
    stream: np.ndarray,
    batch_size: int,
    seq_len: int,
    prefix_len: int,
    num_batches: int,
) -> list[tuple[np.ndarray, int]]:
    """Fixed, unshuffled evaluation batches from the head of a stream."""
    stream = np.asarray(stream)
    needed = batch_size * num_batches * seq_len
    if stream.shape[0] < needed:
        raise InputError(
            f"eval stream too short: need {needed} tokens, have {stream.shape[0]}"
        )
    windows = stream[:needed].reshape(num_batches, batch_size, seq_len)
    return [(windows[i], prefix_len) for i in range(num_batches)]


# -- on-disk corpus cache ----------------------------------------------------------


def corpus_cache_key(spec: LanguageSpec, num_tokens: int, seed: int) -> int:
    payload = json.dumps(
        {"spec": spec.to_dict(), "num_tokens": num_tokens, "seed": seed},
        sort_keys=True,
    ).encode()
    return fnv1a64(payload)


def save_corpus_cache(path: str, spec: LanguageSpec, num_tokens: int, seed: int, tokens: np.ndarray) -> None:
    header = struct.pack(
        "<4sIQI", _CORPUS_MAGIC, _CORPUS_VERSION,
        corpus_cache_key(spec, num_tokens, seed), spec.vocab_size,
    )
    body = np.asarray(tokens, dtype="<u4").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<Q", len(tokens)))
        fh.write(body)
    os.replace(tmp, path)


def load_corpus_cache(path: str, expected_key: int) -> np.ndarray | None:
    """Return cached tokens, or None when the header or key mismatches."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(struct.calcsize("<4sIQI"))
            if len(head) < struct.calcsize("<4sIQI"):
                return None
            magic, version, key, _vocab = struct.unpack("<4sIQI", head)
            if magic != _CORPUS_MAGIC or version != _CORPUS_VERSION or key != expected_key:
                return None
            (count,) = struct.unpack("<Q", fh.read(8))
            body = fh.read(count * 4)
            if len(body) != count * 4:
                return None
            return np.frombuffer(body, dtype="<u4").astype(np.int64)
    except OSError:
        return None


def ensure_corpus(path: str, spec: LanguageSpec, num_tokens: int, seed: int) -> np.ndarray:
    """Load a cached stream if its spec hash matches, else regenerate it."""
    key = corpus_cache_key(spec, num_tokens, seed)
    if os.path.exists(path):
        cached = load_corpus_cache(path, key)
        if cached is not None:
            return cached
    tokens = gen_corpus(spec, num_tokens, seed)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_corpus_cache(path, spec, num_tokens, seed, tokens)
    return tokens
