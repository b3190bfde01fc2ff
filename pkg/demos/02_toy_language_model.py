"""Pretrain one toy transformer on a synthetic language and demonstrate the
k-v cache contract: decoding on top of a prefix cache is exactly the full
forward pass.

Run:  python3 demos/02_toy_language_model.py   (about a minute)
"""

import numpy as np

from kvbabel.corpus import LanguageSpec, eval_windows, gen_corpus, make_batches
from kvbabel.lm import ModelConfig, forward, forward_with_prefix_cache, init_model, lm_loss
from kvbabel.optim import TrainConfig
from kvbabel.training import train_language_model

lang = LanguageSpec(transition_seed=1)
print("language: order-2 Markov chain, 64 symbols, with a period-32 echo")
stream = gen_corpus(lang, 120_000, seed=11)

model = init_model(ModelConfig(), seed=1)
print(f"model: {model.config.num_layers} layers, d_model {model.config.d_model}, "
      f"{model.param_count()} params, cache width {model.config.cache_width}")

cfg = TrainConfig(total_steps=600, warmup_steps=30, peak_lr=3e-3,
                  prefix_len=32, seq_len=64)
batches = make_batches(stream, cfg.batch_size, cfg.seq_len, cfg.prefix_len, seed=2)
rows = train_language_model(model, batches, cfg)
print(f"pretraining NLL: {rows[0].value:.3f} -> {rows[-1].value:.3f} "
      f"(uniform would be {np.log(64):.3f})")
model.freeze()

# cache equivalence: suffix logits via the prefix cache match the full pass
tokens = gen_corpus(lang, 2 * 64, seed=99).reshape(2, 64)
full_logits, _ = forward(model, tokens)
_, cache = forward(model, tokens[:, :32])
suffix_logits = forward_with_prefix_cache(model, cache, tokens[:, 32:], 32)
gap = np.abs(suffix_logits.data - full_logits.data[:, 32:]).max()
print(f"cache equivalence, max |difference|: {gap:.2e}")

# the prefix cache carries real signal: zeroing it hurts the suffix NLL
ev = eval_windows(gen_corpus(lang, 30_000, seed=5), 16, 64, 32, 8)
own, blank = [], []
for toks, s in ev:
    _, c = forward(model, toks[:, :s])
    own.append(lm_loss(model, toks, prefix_cache=c, s=s).item())
    from kvbabel.lm import KVCache
    from kvbabel.tensor import Tensor

    zero = KVCache(Tensor(np.zeros_like(c.keys.data)),
                   Tensor(np.zeros_like(c.values.data)), c.positions)
    blank.append(lm_loss(model, toks, prefix_cache=zero, s=s).item())
print(f"suffix NLL with own cache {np.mean(own):.3f} vs blanked cache "
      f"{np.mean(blank):.3f} (+{100 * (np.mean(blank) / np.mean(own) - 1):.1f}%)")
