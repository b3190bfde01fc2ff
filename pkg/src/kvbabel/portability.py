"""Soft-prompt learning and cross-model prompt portability.

A soft prompt is a small matrix of input embeddings standing in for an
unknown text context. Prompts are always *used* through their k-v cache:
the owner model runs a forward pass over the prompt embeddings, and
completions are scored as a suffix on top of that cache. Porting a prompt
to another model translates that cache through the shared latent space.

Meta-training tunes the pool's adapters so translated prompt caches score
well zero-shot on held-out completions.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, InputError, TrainingAborted
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import PromptTask
from .hashing import derive_seed
from .lm import KVCache, LanguageModel, forward, forward_from_embeddings, forward_with_prefix_cache
from .objectives import Path
from .optim import OptimState, adamw_step, clip_global_norm
from .pool import ModelPool
from .tensor import Rng, Tensor
from .training import MetricsRow
from .translator import translate


@dataclass
class SoftPrompt:
    """p learned input embeddings for one owning model."""

    embeddings: Tensor

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]


def init_soft_prompt(model: LanguageModel, p: int, seed: int) -> SoftPrompt:
    """Random prompt at the same scale as the model's token embeddings."""
    d = model.config.d_model
    rng = Rng(derive_seed(seed, "soft-prompt"))
    return SoftPrompt(Tensor(rng.normal((p, d), std=1.0 / np.sqrt(d)), requires_grad=True))


def prompt_cache(model: LanguageModel, prompt: SoftPrompt, batch: int = 1) -> KVCache:
    """The prompt's k-v cache, broadcast to ``batch`` rows."""
    p, d = prompt.embeddings.shape
    embeds = T.reshape(prompt.embeddings, (1, p, d))
    if batch > 1:
        embeds = T.broadcast_to(embeds, (batch, p, d))
    _, cache = forward_from_embeddings(model, embeds)
    return cache


def completion_nll(model: LanguageModel, cache: KVCache, completions: np.ndarray) -> Tensor:
    """Mean NLL of completion tokens conditioned on a prompt cache.

    The first completion token is unscored: a bare cache yields no logits
    for it. All prompt comparisons use this same convention.
    """
    completions = np.asarray(completions)
    b, t = completions.shape
    if t < 2:
        raise InputError(f"completions need at least 2 tokens to score, got {t}")
    if cache.keys.shape[0] != b:
        raise ContractError(
            f"cache batch {cache.keys.shape[0]} does not match completions batch {b}"
        )
    start = cache.seq_len
    logits = forward_with_prefix_cache(model, cache, completions, start)
    logits = T.slice_axis(logits, 1, 0, t - 1)
    targets = completions[:, 1:]
    return T.softmax_cross_entropy(logits, targets, np.ones(targets.shape, dtype=bool))


def context_cache(model: LanguageModel, context: np.ndarray, batch: int) -> KVCache:
    """Cache of a literal token context, broadcast like a prompt cache."""
    ctx = np.tile(np.asarray(context)[None, :], (batch, 1))
    _, cache = forward(model, ctx)
    return cache


def learn_soft_prompt(
    model: LanguageModel,
    task: PromptTask,
    p: int,
    steps: int,
    seed: int,
    lr: float = 0.05,
) -> SoftPrompt:
    """Fit a soft prompt to a task's train completions on a frozen model.

    ``steps == 0`` returns the random initialization untouched.
    """
    if not model.frozen:
        raise ContractError("soft prompts are learned against a frozen model")
    train = np.asarray(task.train_completions)
    if train.size == 0:
        raise InputError(f"task {task.task_id} has no train completions")
    prompt = init_soft_prompt(model, p, seed)
    if steps == 0:
        return prompt
    named = [("prompt", prompt.embeddings)]
    state = OptimState(named, weight_decay=0.0)
    b = train.shape[0]
    for step in range(steps):
        T.zero_grads([prompt.embeddings])
        loss = completion_nll(model, prompt_cache(model, prompt, batch=b), train)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingAborted(f"non-finite prompt loss at step {step}")
        loss.backward()
        clip_global_norm([prompt.embeddings.grad], 1.0)
        adamw_step(named, state, lr)
    return prompt


def translated_prompt_nll(
    pool: ModelPool,
    src_idx: int,
    dst_idx: int,
    prompt: SoftPrompt,
    completions: np.ndarray,
) -> Tensor:
    """Zero-shot score of a source-model prompt on the target model."""
    b = np.asarray(completions).shape[0]
    cache = prompt_cache(pool.models[src_idx], prompt, batch=b)
    moved = translate(cache, pool.adapters[src_idx], pool.adapters[dst_idx])
    return completion_nll(pool.models[dst_idx], moved, completions)


# -- prompt bank --------------------------------------------------------------


def build_prompt_bank(
    model: LanguageModel,
    tasks: list[PromptTask],
    p: int,
    steps: int,
    seed: int,
    cache_path: str | None = None,
) -> dict[int, np.ndarray]:
    """Learn (or reload) one source-model prompt per task.

    Prompts are cached on disk keyed by the learning settings, so meta
    training never re-fits them.
    """
    meta = {"p": p, "steps": steps, "seed": seed, "num_tasks": len(tasks)}
    if cache_path and os.path.exists(cache_path):
        ckpt = load_checkpoint(cache_path)
        if ckpt.config.get("bank_meta") == meta:
            return {
                int(name.split("task", 1)[1]): arr
                for name, arr in ckpt.tensors.items()
            }
    bank: dict[int, np.ndarray] = {}
    for task in tasks:
        prompt = learn_soft_prompt(
            model, task, p, steps, seed=derive_seed(seed, f"bank-task{task.task_id}")
        )
        bank[task.task_id] = prompt.embeddings.data.copy()
    if cache_path:
        os.makedirs(os.path.dirname(cache_path) or ".", exist_ok=True)
        save_checkpoint(
            cache_path,
            {f"task{tid}": arr for tid, arr in bank.items()},
            {"bank_meta": meta},
        )
    return bank


# -- meta-training ------------------------------------------------------------


def meta_train_portability(
    pool: ModelPool,
    src_idx: int,
    dst_idx: int,
    tasks: list[PromptTask],
    prompt_bank: dict[int, np.ndarray],
    steps: int,
    tasks_per_step: int = 4,
    peak_lr: float = 3e-4,
    seed: int = 0,
    update: str = "all",
    log_every: int = 25,
) -> list[MetricsRow]:
    """Tune adapters so translated prompt caches transfer zero-shot.

    Each step samples tasks, translates their precomputed source prompts'
    caches to the target, and minimizes the target's NLL on the tasks' eval
    completions. ``update`` picks which adapter parameters move: "all"
    (default) or "into" for the into-shared halves only.
    """
    if update not in ("all", "into"):
        raise ContractError(f"unknown meta update mode {update!r}")
    named = pool.named_adapter_parameters(only_trainable=True)
    if update == "into":
        named = [(n, t) for n, t in named if "/into/" in f"/{n}"]
    if not named:
        raise ContractError("meta-training found no trainable adapter parameters")
    tensors = [t for _, t in named]
    state = OptimState(named)
    rng = Rng(derive_seed(seed, "meta-train"))
    rows: list[MetricsRow] = []
    for step in range(steps):
        pick = rng.choice(len(tasks), size=min(tasks_per_step, len(tasks)), replace=False)
        total = None
        for t_i in pick:
            task = tasks[int(t_i)]
            prompt = SoftPrompt(Tensor(prompt_bank[task.task_id]))
            nll = translated_prompt_nll(pool, src_idx, dst_idx, prompt, task.eval_completions)
            total = nll if total is None else T.add(total, nll)
        loss = T.mul(total, 1.0 / len(pick))
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingAborted(f"non-finite meta loss at step {step}")
        T.zero_grads(tensors)
        loss.backward()
        clip_global_norm([t.grad for t in tensors if t.grad is not None], 1.0)
        adamw_step(named, state, peak_lr)
        if step % log_every == 0 or step == steps - 1:
            rows.append(MetricsRow(step, src_idx, dst_idx, "meta_train", value, peak_lr))
    return rows


def meta_eval_portability(
    pool: ModelPool,
    src_idx: int,
    dst_idx: int,
    tasks: list[PromptTask],
    p: int,
    prompt_steps: int,
    seed: int = 0,
) -> dict:
    """Per-task meta-test: translated prompt vs random prompt vs a prompt
    trained directly on the target (the upper bound)."""
    per_task = {"translated": [], "random": [], "direct": []}
    for task in tasks:
        b = task.eval_completions.shape[0]
        src_prompt = learn_soft_prompt(
            pool.models[src_idx], task, p, prompt_steps,
            seed=derive_seed(seed, f"meta-eval-src{task.task_id}"),
        )
        per_task["translated"].append(
            translated_prompt_nll(pool, src_idx, dst_idx, src_prompt, task.eval_completions).item()
        )
        rand_prompt = init_soft_prompt(
            pool.models[dst_idx], p, derive_seed(seed, f"meta-eval-rand{task.task_id}")
        )
        per_task["random"].append(
            completion_nll(
                pool.models[dst_idx],
                prompt_cache(pool.models[dst_idx], rand_prompt, batch=b),
                task.eval_completions,
            ).item()
        )
        direct_prompt = learn_soft_prompt(
            pool.models[dst_idx], task, p, prompt_steps,
            seed=derive_seed(seed, f"meta-eval-dst{task.task_id}"),
        )
        per_task["direct"].append(
            completion_nll(
                pool.models[dst_idx],
                prompt_cache(pool.models[dst_idx], direct_prompt, batch=b),
                task.eval_completions,
            ).item()
        )
    summary = {
        kind: {
            "mean": float(np.mean(vals)),
            "std": float(np.std(vals)),
            "per_task": [float(v) for v in vals],
        }
        for kind, vals in per_task.items()
    }
    wins = sum(
        1 for tr, rnd in zip(per_task["translated"], per_task["random"]) if tr < rnd
    )
    summary["translated_beats_random_fraction"] = wins / len(tasks)
    return summary
