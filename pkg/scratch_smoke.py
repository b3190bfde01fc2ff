"""Scratch calibration: does the seed-pair experiment reproduce the ordering
translator < linear < identity, with identity >> base? Not part of the package."""

import time

import numpy as np

from kvbabel import tensor as T
from kvbabel.corpus import LanguageSpec, eval_windows, gen_corpus, make_batches
from kvbabel.lm import ModelConfig, init_model, lm_loss
from kvbabel.optim import OptimState, TrainConfig, adamw_step, clip_global_norm, lr_at
from kvbabel.pool import build_pool
from kvbabel.training import evaluate_paths, train_translators
from kvbabel.translator import TranslatorConfig

LANG = LanguageSpec(transition_seed=1)
MODEL_CFG = ModelConfig()


def pretrain(seed, steps=800, lr=3e-3):
    model = init_model(MODEL_CFG, seed)
    stream = gen_corpus(LANG, 200_000, seed=100)
    batches = make_batches(stream, 16, 64, 32, seed=200 + seed)
    named = model.named_parameters()
    cfg = TrainConfig(total_steps=steps, warmup_steps=steps // 20, peak_lr=lr,
                      prefix_len=32, seq_len=64)
    state = OptimState.for_config(named, cfg)
    t0 = time.perf_counter()
    for step in range(steps):
        tokens, _ = next(batches)
        T.zero_grads([p for _, p in named])
        loss = lm_loss(model, tokens, s=0)
        loss.backward()
        clip_global_norm([p.grad for _, p in named if p.grad is not None], 1.0)
        adamw_step(named, state, lr_at(step, cfg))
        if step % 200 == 0:
            print(f"  pretrain[{seed}] step {step}: {loss.item():.4f}")
    print(f"  pretrain[{seed}] done in {time.perf_counter()-t0:.1f}s final {loss.item():.4f}")
    return model.freeze()


def main():
    t_start = time.perf_counter()
    m1 = pretrain(1)
    m2 = pretrain(2)

    eval_stream = gen_corpus(LANG, 40_000, seed=999)
    ev = eval_windows(eval_stream, batch_size=16, seq_len=64, prefix_len=32, num_batches=16)

    pool = build_pool([m1, m2], TranslatorConfig(), seed=7)
    base = evaluate_paths(pool, ev, mode="none")
    ident = evaluate_paths(pool, ev, mode="identity")
    untrained = evaluate_paths(pool, ev, mode="trained")
    print("base diag:", np.diag(base))
    print("identity matrix:\n", ident)
    print("untrained translator matrix:\n", untrained)

    stream = gen_corpus(LANG, 200_000, seed=300)
    batches = make_batches(stream, 16, 64, 32, seed=301)
    cfg = TrainConfig(total_steps=400, warmup_steps=20, peak_lr=1e-3,
                      prefix_len=32, seq_len=64, eval_every=100, seed=11)
    t0 = time.perf_counter()
    rows = train_translators(pool, batches, cfg, eval_batches=ev[:4])
    dt = time.perf_counter() - t0
    print(f"translator train 400 steps in {dt:.1f}s ({dt/400*1000:.0f} ms/step)")
    for r in rows:
        if r.loss_kind == "train_total" and r.step % 100 == 0:
            print(f"  step {r.step}: train {r.value:.4f}")
    final = evaluate_paths(pool, ev, mode="trained")
    print("trained translator matrix:\n", final)
    print(f"total {time.perf_counter()-t_start:.1f}s")


if __name__ == "__main__":
    main()
