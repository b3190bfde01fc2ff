"""Dress rehearsal for the seed-pair acceptance criteria. Not part of the package."""

import json
import time

import numpy as np

from kvbabel import tensor as T
from kvbabel.checkpoint import load_model, save_model
from kvbabel.corpus import LanguageSpec, ensure_corpus, eval_windows, gen_corpus, make_batches
from kvbabel.lm import ModelConfig, init_model, lm_loss
from kvbabel.optim import OptimState, TrainConfig, adamw_step, clip_global_norm, lr_at
from kvbabel.pool import build_pool
from kvbabel.training import evaluate_paths, train_translators
from kvbabel.translator import TranslatorConfig

LANG = LanguageSpec(transition_seed=1)


def pretrain(seed, steps=2500, lr=3e-3):
    model = init_model(ModelConfig(), seed)
    stream = ensure_corpus(f"/tmp/corpus_a.kvcc", LANG, 300_000, 100)
    batches = make_batches(stream, 16, 64, 32, seed=200 + seed)
    named = model.named_parameters()
    cfg = TrainConfig(total_steps=steps, warmup_steps=steps // 20, peak_lr=lr,
                      prefix_len=32, seq_len=64)
    state = OptimState.for_config(named, cfg)
    for step in range(steps):
        tokens, _ = next(batches)
        T.zero_grads([p for _, p in named])
        loss = lm_loss(model, tokens, s=0)
        loss.backward()
        clip_global_norm([p.grad for _, p in named if p.grad is not None], 1.0)
        adamw_step(named, state, lr_at(step, cfg))
    print(f"pretrain[{seed}] final {loss.item():.4f}", flush=True)
    return model.freeze()


def main():
    t0 = time.perf_counter()
    models = []
    for seed in (1, 2):
        m = pretrain(seed)
        save_model(f"/tmp/seedpair_m{seed}.kvbl", m)
        models.append(m)
    print(f"pretraining done {time.perf_counter()-t0:.0f}s", flush=True)

    ev = eval_windows(gen_corpus(LANG, 40_000, seed=999), 16, 64, 32, 16)
    train_stream = gen_corpus(LANG, 400_000, seed=300)

    results = {}
    pool = build_pool(models, TranslatorConfig(), seed=7)
    results["base"] = evaluate_paths(pool, ev, mode="none").tolist()
    results["identity"] = evaluate_paths(pool, ev, mode="identity").tolist()

    for name, kind, lr in (("xattn_lr3e-3", "xattn", 3e-3),
                           ("xattn_lr1e-3", "xattn", 1e-3),
                           ("linear_lr3e-3", "linear", 3e-3)):
        p = build_pool(models, TranslatorConfig(), seed=7, kind=kind)
        batches = make_batches(train_stream, 16, 64, 32, seed=301)
        cfg = TrainConfig(total_steps=2000, warmup_steps=100, peak_lr=lr,
                          prefix_len=32, seq_len=64, eval_every=10_000, seed=11)
        t1 = time.perf_counter()
        train_translators(p, batches, cfg)
        matrix = evaluate_paths(p, ev, mode="trained")
        results[name] = matrix.tolist()
        print(f"{name}: {time.perf_counter()-t1:.0f}s\n{np.round(matrix, 4)}", flush=True)

    with open("/tmp/rehearsal.json", "w") as fh:
        json.dump(results, fh, indent=1)

    base = np.array(results["base"]); ident = np.array(results["identity"])
    for name in ("xattn_lr3e-3", "xattn_lr1e-3", "linear_lr3e-3"):
        m = np.array(results[name])
        off = (m[0, 1] + m[1, 0]) / 2
        diag = (m[0, 0] + m[1, 1]) / 2
        print(f"{name}: off-diag {off:.4f} diag {diag:.4f}")
    ident_off = (ident[0, 1] + ident[1, 0]) / 2
    base_mean = (base[0, 0] + base[1, 1]) / 2
    print(f"identity off {ident_off:.4f} vs base {base_mean:.4f} "
          f"(+{100 * (ident_off / base_mean - 1):.1f}%)")
    print(f"total {time.perf_counter()-t0:.0f}s")


if __name__ == "__main__":
    main()
