"""Pools of frozen models plus their translation adapters."""

from __future__ import annotations

from dataclasses import dataclass, field

from .checkpoint import CorruptCheckpointError, copy_into_named, load_checkpoint, save_checkpoint
from .errors import ConfigError, ContractError
from .hashing import derive_seed
from .lm import LanguageModel, ModelConfig
from .tensor import Tensor
from .translator import (
    AdapterPair,
    LinearAdapterPair,
    TranslatorConfig,
    build_adapter_pair,
    default_linear_width,
    validate_shared_width,
)


@dataclass
class ModelPool:
    """Frozen base models, one adapter pair each, and the shared width.

    ``trainable`` masks which adapter pairs receive gradients; incumbents
    stay fixed during pool extension.
    """

    models: list[LanguageModel]
    adapters: list
    q_dim: int
    trainable: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if len(self.models) != len(self.adapters):
            raise ContractError(
                f"pool has {len(self.models)} models but {len(self.adapters)} adapter pairs"
            )
        if not self.trainable:
            self.trainable = [True] * len(self.models)
        if len(self.trainable) != len(self.models):
            raise ContractError("trainable mask length does not match pool size")

    @property
    def num_models(self) -> int:
        return len(self.models)

    def named_adapter_parameters(self, only_trainable: bool = True):
        out: list[tuple[str, Tensor]] = []
        for i, pair in enumerate(self.adapters):
            if only_trainable and not self.trainable[i]:
                continue
            out.extend(pair.named_parameters(f"adapter{i}/"))
        return out

    def trainable_tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_adapter_parameters(only_trainable=True)]

    def adapter_param_total(self) -> int:
        return sum(pair.param_count() for pair in self.adapters)


def build_pool(
    models: list[LanguageModel],
    tconfig: TranslatorConfig,
    seed: int,
    kind: str = "xattn",
    linear_width: int | None = None,
) -> ModelPool:
    """Construct adapters for every model and validate the shared width.

    All members must already be frozen; adapters are the only trainable
    state a pool exposes.
    """
    if kind not in ("xattn", "linear"):
        raise ConfigError(f"unknown adapter kind {kind!r}")
    for i, m in enumerate(models):
        if not m.frozen:
            raise ContractError(f"pool model {i} is not frozen")
        validate_shared_width(tconfig.q_dim, m.config.num_layers)

    adapters: list = []
    if kind == "linear":
        width = linear_width or default_linear_width([m.config for m in models])
        for i, m in enumerate(models):
            adapters.append(
                LinearAdapterPair(m.config, width, derive_seed(seed, f"linear{i}"))
            )
        q = width
    else:
        for i, m in enumerate(models):
            adapters.append(
                build_adapter_pair(m.config, tconfig, derive_seed(seed, f"adapter{i}"))
            )
        q = tconfig.q_dim
    return ModelPool(models=list(models), adapters=adapters, q_dim=q)


def add_member(pool: ModelPool, model: LanguageModel, tconfig: TranslatorConfig, seed: int) -> ModelPool:
    """Extend a pool with one model: a fresh trainable pair, incumbents frozen."""
    if not model.frozen:
        raise ContractError("new pool member must be frozen")
    validate_shared_width(tconfig.q_dim, model.config.num_layers)
    if isinstance(pool.adapters[0], LinearAdapterPair):
        new_pair: object = LinearAdapterPair(model.config, pool.q_dim, seed)
    else:
        if tconfig.q_dim != pool.q_dim:
            raise ConfigError(
                f"shared width {tconfig.q_dim} does not match pool width {pool.q_dim}"
            )
        new_pair = build_adapter_pair(model.config, tconfig, seed)
    return ModelPool(
        models=pool.models + [model],
        adapters=pool.adapters + [new_pair],
        q_dim=pool.q_dim,
        trainable=[False] * pool.num_models + [True],
    )


def save_pool(path: str, pool: ModelPool, tconfig: TranslatorConfig) -> int:
    """Write the whole pool (models plus adapters) as one checkpoint."""
    adapter_kind = "linear" if isinstance(pool.adapters[0], LinearAdapterPair) else "xattn"
    config = {
        "kind": "adapter_pool",
        "adapter_kind": adapter_kind,
        "q_dim": pool.q_dim,
        "trainable": pool.trainable,
        "tconfig": tconfig.to_dict(),
        "model_configs": [m.config.to_dict() for m in pool.models],
    }
    tensors: dict = {}
    for i, m in enumerate(pool.models):
        for name, t in m.named_parameters():
            tensors[f"model{i}/{name}"] = t
    for i, pair in enumerate(pool.adapters):
        for name, t in pair.named_parameters(f"adapter{i}/"):
            tensors[name] = t
    return save_checkpoint(path, tensors, config)


def load_pool(path: str) -> tuple[ModelPool, TranslatorConfig]:
    """Rebuild a pool from a checkpoint written by save_pool."""
    from .lm import init_model

    ckpt = load_checkpoint(path)
    if ckpt.config.get("kind") != "adapter_pool":
        raise CorruptCheckpointError(f"{path}: not a pool checkpoint")
    tconfig = TranslatorConfig.from_dict(ckpt.config["tconfig"])
    q_dim = ckpt.config["q_dim"]
    kind = ckpt.config["adapter_kind"]
    models, adapters = [], []
    for i, cfg_dict in enumerate(ckpt.config["model_configs"]):
        mcfg = ModelConfig.from_dict(cfg_dict)
        model = init_model(mcfg, seed=0)
        copy_into_named(model.named_parameters(), ckpt.tensors, prefix=f"model{i}/")
        models.append(model.freeze())
        if kind == "linear":
            pair: object = LinearAdapterPair(mcfg, q_dim, seed=0)
            copy_into_named(pair.named_parameters(), ckpt.tensors, prefix=f"adapter{i}/")
        else:
            pair = build_adapter_pair(mcfg, tconfig, seed=0)
            copy_into_named(pair.named_parameters(), ckpt.tensors, prefix=f"adapter{i}/")
        adapters.append(pair)
    pool = ModelPool(
        models=models, adapters=adapters, q_dim=q_dim,
        trainable=list(ckpt.config["trainable"]),
    )
    return pool, tconfig
