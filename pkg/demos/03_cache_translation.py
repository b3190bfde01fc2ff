"""Two models with different random initializations learn to share caches.

Trains a small adapter pool for a short budget and compares: each model's
own-cache baseline, the identity mapping (raw foreign cache), and the
learned translator. With the full 2k-step budget the ordering matches the
acceptance suite; this demo uses 400 steps to stay quick.

Run:  python3 demos/03_cache_translation.py   (about five minutes)
"""

import numpy as np

from kvbabel.corpus import LanguageSpec, eval_windows, gen_corpus, make_batches
from kvbabel.lm import ModelConfig, init_model
from kvbabel.optim import TrainConfig
from kvbabel.pool import build_pool
from kvbabel.training import evaluate_paths, train_language_model, train_translators
from kvbabel.translator import TranslatorConfig

lang = LanguageSpec(transition_seed=1)
stream = gen_corpus(lang, 250_000, seed=100)

models = []
for seed in (1, 2):
    model = init_model(ModelConfig(), seed)
    cfg = TrainConfig(total_steps=1200, warmup_steps=60, peak_lr=3e-3,
                      prefix_len=32, seq_len=64)
    batches = make_batches(stream, cfg.batch_size, cfg.seq_len, cfg.prefix_len,
                           seed=200 + seed)
    rows = train_language_model(model, batches, cfg)
    print(f"model[{seed}] pretrained: NLL {rows[-1].value:.3f}")
    models.append(model.freeze())

ev = eval_windows(gen_corpus(lang, 30_000, seed=999), 16, 64, 32, 8)
pool = build_pool(models, TranslatorConfig(), seed=7)

base = evaluate_paths(pool, ev, mode="none")
identity = evaluate_paths(pool, ev, mode="identity")
print(f"\nown-cache baseline NLL: {np.diag(base).round(3)}")
print(f"identity mapping (foreign cache, no learning):\n{identity.round(3)}")

cfg = TrainConfig(total_steps=400, warmup_steps=20, peak_lr=5e-3,
                  prefix_len=32, seq_len=64, seed=11)
batches = make_batches(gen_corpus(lang, 250_000, seed=300), 16, 64, 32, seed=301)
train_translators(pool, batches, cfg)
trained = evaluate_paths(pool, ev, mode="trained")
print(f"\nlearned translator (400 steps), rows=source, cols=target:\n{trained.round(3)}")

off_ident = (identity[0, 1] + identity[1, 0]) / 2
off_trained = (trained[0, 1] + trained[1, 0]) / 2
print(f"\ncross-model NLL: identity {off_ident:.3f} vs translator {off_trained:.3f} "
      f"({100 * (1 - off_trained / off_ident):.1f}% better)")
