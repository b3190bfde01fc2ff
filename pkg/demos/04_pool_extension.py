"""Extending a trained pool: a newcomer learns only its own adapter pair,
with every incumbent adapter frozen, and can still translate zero-shot
along paths it never trained on.

Run:  python3 demos/04_pool_extension.py   (several minutes)
"""

import numpy as np

from kvbabel.checkpoint import fingerprint
from kvbabel.corpus import LanguageSpec, eval_windows, gen_corpus, make_batches
from kvbabel.lm import ModelConfig, init_model
from kvbabel.optim import TrainConfig
from kvbabel.pool import build_pool
from kvbabel.training import evaluate_paths, extend_pool, train_language_model, train_translators
from kvbabel.translator import TranslatorConfig

lang = LanguageSpec(transition_seed=1)
stream = gen_corpus(lang, 250_000, seed=100)


def pretrain(seed):
    model = init_model(ModelConfig(), seed)
    cfg = TrainConfig(total_steps=900, warmup_steps=45, peak_lr=3e-3,
                      prefix_len=32, seq_len=64)
    batches = make_batches(stream, 16, 64, 32, seed=200 + seed)
    train_language_model(model, batches, cfg)
    return model.freeze()


models = [pretrain(s) for s in (1, 2, 3)]
ev = eval_windows(gen_corpus(lang, 30_000, seed=999), 16, 64, 32, 6)

pool = build_pool(models, TranslatorConfig(), seed=7)
cfg = TrainConfig(total_steps=500, warmup_steps=25, peak_lr=5e-3,
                  prefix_len=32, seq_len=64, seed=11)
batches = make_batches(gen_corpus(lang, 250_000, seed=300), 16, 64, 32, seed=301)
train_translators(pool, batches, cfg)
print("3-model pool trained; per-path NLL:")
print(evaluate_paths(pool, ev, mode="trained").round(3))

incumbents_before = [fingerprint(dict(p.named_parameters())) for p in pool.adapters]

newcomer = pretrain(4)
ext_cfg = TrainConfig(total_steps=400, warmup_steps=20, peak_lr=5e-3,
                      prefix_len=32, seq_len=64, seed=13)
ext_batches = make_batches(gen_corpus(lang, 250_000, seed=400), 16, 64, 32, seed=401)
bigger, _ = extend_pool(
    pool, newcomer, TranslatorConfig(), ext_cfg, ext_batches,
    train_partners=[1, 2],  # model 0 held out: paths 0<->3 are never trained
)

incumbents_after = [fingerprint(dict(p.named_parameters())) for p in bigger.adapters[:3]]
print(f"\nincumbent adapters bit-identical after extension: "
      f"{incumbents_before == incumbents_after}")

matrix = evaluate_paths(bigger, ev, mode="trained")
print("extended pool per-path NLL (model 3 is the newcomer):")
print(matrix.round(3))
zero_shot = (matrix[0, 3] + matrix[3, 0]) / 2
trained_paths = (matrix[1, 3] + matrix[3, 1] + matrix[2, 3] + matrix[3, 2]) / 4
print(f"\nnever-trained paths 0<->3: {zero_shot:.3f} vs trained newcomer paths "
      f"{trained_paths:.3f} ({100 * (zero_shot / trained_paths - 1):+.1f}%)")
