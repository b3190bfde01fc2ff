"""AdamW, gradient clipping, and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .tensor import Tensor


@dataclass
class TrainConfig:
    """Everything a training run needs; fully serializable.

    Defaults are the desk-scale analog of the reference recipe: 2k steps,
    5% linear warmup from 1e-6 to the peak rate, cosine decay to zero,
    global-norm clipping at 1.0, AdamW with (0.9, 0.999, 1e-8) and weight
    decay 1e-4.
    """

    total_steps: int = 2000
    warmup_steps: int = 100
    init_lr: float = 1e-6
    peak_lr: float = 3e-4
    batch_size: int = 16
    clip_norm: float = 1.0
    paths_per_step: int = 0  # 0 means every possible path each step
    recon_weight: float = 0.0
    lm_weight: float = 1.0
    seed: int = 0
    prefix_len: int = 32
    seq_len: int = 64
    eval_every: int = 500
    eval_batches: int = 24
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.warmup_steps > self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} exceeds total_steps {self.total_steps}"
            )
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.prefix_len >= self.seq_len:
            raise ConfigError(
                f"prefix_len {self.prefix_len} must be shorter than seq_len {self.seq_len}"
            )
        if self.batch_size < 1 or self.total_steps < 1:
            raise ConfigError("batch_size and total_steps must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear ramp init_lr -> peak_lr over warmup, then cosine to zero."""
    step = max(0, min(step, cfg.total_steps))
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        frac = step / cfg.warmup_steps
        return cfg.init_lr + (cfg.peak_lr - cfg.init_lr) * frac
    span = cfg.total_steps - cfg.warmup_steps
    if span <= 0:
        return cfg.peak_lr if step < cfg.total_steps else 0.0
    progress = (step - cfg.warmup_steps) / span
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale all grads in place so their joint L2 norm is at most max_norm.

    Returns the scale applied (1.0 when already within bounds).
    """
    total = 0.0
    for g in grads:
        total += float((g * g).sum())
    if not math.isfinite(total):
        raise NumericError("non-finite gradient encountered during clipping")
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for g in grads:
        g *= scale
    return scale


class OptimState:
    """Per-parameter AdamW moments plus the shared step counter."""

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in named_params}

    @classmethod
    def for_config(cls, named_params, cfg: TrainConfig) -> "OptimState":
        return cls(named_params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in sorted(self.m):
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out


def adamw_step(
    named_params: list[tuple[str, Tensor]],
    state: OptimState,
    lr: float,
) -> None:
    """One decoupled-weight-decay Adam update with bias correction.

    Parameters with no accumulated gradient are treated as having zero
    gradient (their moments still decay).
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name} shape {p.data.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data -= lr * update
