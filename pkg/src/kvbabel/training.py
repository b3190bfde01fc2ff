"""Training loops: translator learning, pool extension, and path evaluation.

Each step samples a token batch and a set of translation paths, accumulates
the combined loss, clips the global gradient norm, and applies AdamW under
the warmup+cosine schedule. Base models stay frozen throughout; only
adapter pairs whose trainable flag is set receive updates. All randomness
derives from the run seed, so identical configs produce identical metrics.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, TrainingAborted
from .hashing import derive_seed
from .lm import forward, lm_loss
from .objectives import (
    LossWeights,
    Path,
    all_paths,
    combined_step_loss,
    sample_from,
    suffix_lm_loss,
)
from .optim import OptimState, TrainConfig, adamw_step, clip_global_norm, lr_at
from .pool import ModelPool, add_member
from .tensor import Rng
from .translator import LinearAdapterPair, TranslatorConfig, identity_baseline

METRICS_COLUMNS = ("step", "path_src", "path_dst", "loss_kind", "value", "lr")


@dataclass
class MetricsRow:
    step: int
    path_src: int
    path_dst: int
    loss_kind: str
    value: float
    lr: float

    def as_tuple(self):
        return (
            str(self.step),
            str(self.path_src),
            str(self.path_dst),
            self.loss_kind,
            repr(float(self.value)),
            repr(float(self.lr)),
        )


def write_metrics_csv(path: str, rows: list[MetricsRow]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(row.as_tuple())


def read_metrics_csv(path: str) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRICS_COLUMNS:
            raise ContractError(f"{path}: unexpected metrics columns {header}")
        for rec in reader:
            rows.append(
                MetricsRow(int(rec[0]), int(rec[1]), int(rec[2]), rec[3],
                           float(rec[4]), float(rec[5]))
            )
    return rows


def evaluate_paths(pool: ModelPool, eval_batches, mode: str = "trained") -> np.ndarray:
    """Mean suffix NLL per (src, dst) path on fixed evaluation batches.

    Modes: "trained" runs the pool's adapters (cross-attention or linear),
    "linear" is "trained" with a check that the adapters are linear,
    "identity" passes caches through unchanged where dimensions allow
    (NaN marks unsupported pairs), and "none" fills only the diagonal with
    each model's own-cache baseline.
    """
    n = pool.num_models
    if mode == "linear" and not isinstance(pool.adapters[0], LinearAdapterPair):
        raise ContractError("mode 'linear' requires a pool built with linear adapters")
    if mode not in ("trained", "linear", "identity", "none"):
        raise ContractError(f"unknown evaluation mode {mode!r}")
    totals = np.zeros((n, n))
    counts = np.zeros((n, n))
    for tokens, s in eval_batches:
        caches = {}
        if mode in ("trained", "linear", "identity"):
            for i in range(n):
                _, caches[i] = forward(pool.models[i], tokens[:, :s])
        for i in range(n):
            for j in range(n):
                if mode == "none":
                    if i != j:
                        continue
                    val = lm_loss(pool.models[i], tokens, s=s).item()
                elif mode == "identity":
                    ci, cj = pool.models[i].config, pool.models[j].config
                    if (ci.num_layers, ci.cache_width) != (cj.num_layers, cj.cache_width):
                        continue
                    cache = identity_baseline(caches[i], cj)
                    val = lm_loss(pool.models[j], tokens, prefix_cache=cache, s=s).item()
                else:
                    val = suffix_lm_loss(
                        Path(i, j), tokens, s, pool, src_cache=caches[i]
                    ).item()
                totals[i, j] += val
                counts[i, j] += 1
    matrix = np.full((n, n), np.nan)
    np.divide(totals, counts, out=matrix, where=counts > 0)
    return matrix


def _eval_rows(step: int, matrix: np.ndarray, lr: float) -> list[MetricsRow]:
    rows = []
    n = matrix.shape[0]
    for i in range(n):
        for j in range(n):
            if math.isfinite(matrix[i, j]):
                rows.append(MetricsRow(step, i, j, "eval_nll", matrix[i, j], lr))
    return rows


def train_translators(
    pool: ModelPool,
    batches,
    cfg: TrainConfig,
    eval_batches=None,
    candidates: list[Path] | None = None,
    metrics_path: str | None = None,
    log_every: int = 50,
) -> list[MetricsRow]:
    """Run the full translator-training loop and return the metrics log.

    ``batches`` yields (tokens, prefix_len); ``candidates`` restricts the
    sampled paths (pool extension uses this); ``eval_batches`` triggers a
    per-path NLL matrix every cfg.eval_every steps and at the end.
    """
    for i, m in enumerate(pool.models):
        if not m.frozen:
            raise ContractError(f"pool model {i} must be frozen for translator training")
    named = pool.named_adapter_parameters(only_trainable=True)
    if not named:
        raise ContractError("no trainable adapter parameters in pool")
    tensors = [t for _, t in named]
    if candidates is None:
        candidates = all_paths(pool.num_models)
    pps = cfg.paths_per_step if cfg.paths_per_step > 0 else len(candidates)
    weights = LossWeights(recon_weight=cfg.recon_weight, lm_weight=cfg.lm_weight)
    rng = Rng(derive_seed(cfg.seed, "path-sampling"))
    state = OptimState.for_config(named, cfg)

    rows: list[MetricsRow] = []
    for step in range(cfg.total_steps):
        tokens, s = next(batches)
        paths = sample_from(candidates, pps, rng)
        lr = lr_at(step, cfg)
        loss = combined_step_loss(paths, tokens, s, weights, pool)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingAborted(
                f"non-finite loss at step {step} (lr {lr:.3g}, paths "
                f"{[(p.src, p.dst) for p in paths]})"
            )
        T.zero_grads(tensors)
        loss.backward()
        clip_global_norm([t.grad for t in tensors if t.grad is not None], cfg.clip_norm)
        adamw_step(named, state, lr)
        if step % log_every == 0 or step == cfg.total_steps - 1:
            rows.append(MetricsRow(step, -1, -1, "train_total", value, lr))
        if eval_batches is not None and (step + 1) % cfg.eval_every == 0 and step != cfg.total_steps - 1:
            matrix = evaluate_paths(pool, eval_batches, mode="trained")
            rows.extend(_eval_rows(step + 1, matrix, lr))
    if eval_batches is not None:
        matrix = evaluate_paths(pool, eval_batches, mode="trained")
        rows.extend(_eval_rows(cfg.total_steps, matrix, lr_at(cfg.total_steps, cfg)))
    if metrics_path:
        write_metrics_csv(metrics_path, rows)
    return rows


def train_language_model(
    model,
    batches,
    cfg: TrainConfig,
    model_index: int = 0,
    log_every: int = 100,
) -> list[MetricsRow]:
    """Standard next-token pretraining for one base model.

    Scores every position (s=0); the same scheduler, clipping, and AdamW
    settings as translator training apply.
    """
    if model.frozen:
        raise ContractError("cannot pretrain a frozen model")
    named = model.named_parameters()
    tensors = [t for _, t in named]
    state = OptimState.for_config(named, cfg)
    rows: list[MetricsRow] = []
    for step in range(cfg.total_steps):
        tokens, _ = next(batches)
        lr = lr_at(step, cfg)
        loss = lm_loss(model, tokens, s=0)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingAborted(f"non-finite pretraining loss at step {step} (lr {lr:.3g})")
        T.zero_grads(tensors)
        loss.backward()
        clip_global_norm([t.grad for t in tensors if t.grad is not None], cfg.clip_norm)
        adamw_step(named, state, lr)
        if step % log_every == 0 or step == cfg.total_steps - 1:
            rows.append(MetricsRow(step, model_index, model_index, "pretrain", value, lr))
    return rows


def extension_paths(pool_size: int, new_index: int, partners: list[int]) -> list[Path]:
    """Both directions between the newcomer and each allowed incumbent."""
    paths = []
    for p in partners:
        if p == new_index:
            continue
        paths.append(Path(new_index, p))
        paths.append(Path(p, new_index))
    return paths


def extend_pool(
    pool: ModelPool,
    new_model,
    tconfig: TranslatorConfig,
    cfg: TrainConfig,
    batches,
    train_partners: list[int] | None = None,
    eval_batches=None,
    metrics_path: str | None = None,
) -> tuple[ModelPool, list[MetricsRow]]:
    """Add one member and train only its adapter pair.

    ``train_partners`` lists the incumbents whose paths may be sampled
    (both directions); any incumbent left out yields never-trained paths
    for zero-shot evaluation. Incumbent adapters stay bit-identical.
    """
    bigger = add_member(pool, new_model, tconfig, seed=derive_seed(cfg.seed, "extension-pair"))
    new_index = bigger.num_models - 1
    if train_partners is None:
        train_partners = list(range(pool.num_models))
    candidates = extension_paths(bigger.num_models, new_index, train_partners)
    rows = train_translators(
        bigger, batches, cfg,
        eval_batches=eval_batches,
        candidates=candidates,
        metrics_path=metrics_path,
    )
    return bigger, rows


def final_eval_matrix(rows: list[MetricsRow], num_models: int) -> np.ndarray:
    """Pull the last logged eval matrix out of a metrics log."""
    matrix = np.full((num_models, num_models), np.nan)
    last_step = max((r.step for r in rows if r.loss_kind == "eval_nll"), default=None)
    if last_step is None:
        return matrix
    for r in rows:
        if r.loss_kind == "eval_nll" and r.step == last_step:
            matrix[r.path_src, r.path_dst] = r.value
    return matrix
