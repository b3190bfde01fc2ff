"""kvbabel: teach pools of frozen toy language models to read and write
each other's k-v caches through a shared latent space.

The package is organized around one pipeline: synthetic corpora
(:mod:`kvbabel.corpus`) feed small transformers (:mod:`kvbabel.lm`), whose
caches are moved between models by adapter pairs (:mod:`kvbabel.translator`)
trained with suffix language-modelling and reconstruction objectives
(:mod:`kvbabel.objectives`, :mod:`kvbabel.training`). Soft-prompt
portability lives in :mod:`kvbabel.portability`; everything runs on the
in-house autodiff engine in :mod:`kvbabel.tensor`.
"""

from .corpus import LanguageSpec, ParallelPair, PromptTask
from .lm import KVCache, LanguageModel, ModelConfig, forward, forward_with_prefix_cache, init_model, lm_loss
from .objectives import LossWeights, Path
from .optim import OptimState, TrainConfig
from .pool import ModelPool, build_pool
from .portability import SoftPrompt, learn_soft_prompt
from .tensor import Rng, Tensor, grad_check
from .training import evaluate_paths, extend_pool, train_language_model, train_translators
from .translator import AdapterPair, SharedLatentBlock, TranslatorConfig, build_adapter_pair, translate

__version__ = "0.1.0"

__all__ = [
    "AdapterPair",
    "KVCache",
    "LanguageModel",
    "LanguageSpec",
    "LossWeights",
    "ModelConfig",
    "ModelPool",
    "OptimState",
    "ParallelPair",
    "Path",
    "PromptTask",
    "Rng",
    "SharedLatentBlock",
    "SoftPrompt",
    "Tensor",
    "TrainConfig",
    "TranslatorConfig",
    "build_adapter_pair",
    "build_pool",
    "evaluate_paths",
    "extend_pool",
    "forward",
    "forward_with_prefix_cache",
    "grad_check",
    "init_model",
    "learn_soft_prompt",
    "lm_loss",
    "train_language_model",
    "train_translators",
    "translate",
]
