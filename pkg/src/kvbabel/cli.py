"""Command-line front door for the experiment recipes.

Subcommands: pretrain, train-translator, extend, meta, eval, report. Every
run directory is self-describing: the resolved config is written first, so
a crash mid-run still leaves something reproducible behind. Flag values
override config-file values, which override defaults. The environment
variable KVBABEL_SEED overrides the seed from anywhere (meant for CI).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np
from filelock import FileLock, Timeout

from .checkpoint import load_model, save_model
from .corpus import (
    LanguageSpec,
    ensure_corpus,
    eval_windows,
    gen_corpus,
    gen_prompt_tasks,
    make_batches,
    mixture_stream,
)
from .errors import ConfigError, KvBabelError
from .hashing import derive_seed
from .lm import ModelConfig, init_model
from .optim import TrainConfig
from .pool import build_pool, load_pool, save_pool
from .portability import (
    build_prompt_bank,
    meta_eval_portability,
    meta_train_portability,
)
from .training import (
    evaluate_paths,
    extend_pool,
    final_eval_matrix,
    read_metrics_csv,
    train_language_model,
    train_translators,
    write_metrics_csv,
)
from .translator import TranslatorConfig

DEFAULT_DATA = {
    "vocab_size": 64,
    "languages": [{"transition_seed": 1}],
    "weights": [1.0],
    "temperature": 1.0,
    "echo_period": 32,
    "echo_boost": 4.0,
    "train_tokens": 400_000,
    "train_corpus_seed": 100,
    "eval_tokens": 40_000,
    "eval_corpus_seed": 999,
    "eval_batches": 16,
}


@dataclass
class ExperimentConfig:
    """Everything one run needs, serializable as the config snapshot."""

    command: str
    recipe: str = "seeds"
    seed: int = 0
    out_dir: str = "run"
    model: dict = field(default_factory=lambda: ModelConfig().to_dict())
    translator: dict = field(default_factory=lambda: TranslatorConfig().to_dict())
    train: dict = field(default_factory=lambda: TrainConfig().to_dict())
    data: dict = field(default_factory=lambda: dict(DEFAULT_DATA))
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.model)

    def translator_config(self) -> TranslatorConfig:
        return TranslatorConfig.from_dict(self.translator)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.train)

    def language_specs(self) -> list[LanguageSpec]:
        vocab = tuple(range(self.data["vocab_size"]))
        return [
            LanguageSpec(
                vocab=vocab,
                transition_seed=lang["transition_seed"],
                order=lang.get("order", 2),
                temperature=lang.get("temperature", self.data["temperature"]),
                echo_period=lang.get("echo_period", self.data["echo_period"]),
                echo_boost=lang.get("echo_boost", self.data["echo_boost"]),
            )
            for lang in self.data["languages"]
        ]


def _json_sanitize(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _json_sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_sanitize(obj.tolist())
    return obj


def _matrix_json(matrix: np.ndarray):
    return _json_sanitize(matrix.tolist())


class RunDirectory:
    """A locked run directory with the standard layout."""

    def __init__(self, out_dir: str):
        self.root = out_dir
        os.makedirs(out_dir, exist_ok=True)
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        self._lock = FileLock(os.path.join(out_dir, "run.lock"))

    def __enter__(self):
        try:
            self._lock.acquire(timeout=0.1)
        except Timeout:
            raise KvBabelError(
                f"run directory {self.root} is locked by another process"
            ) from None
        return self

    def __exit__(self, *exc):
        self._lock.release()

    def path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    def write_config(self, config: ExperimentConfig) -> None:
        with open(self.path("config.json"), "w") as fh:
            fh.write(config.to_json())
            fh.write("\n")

    def write_json(self, name: str, payload) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(_json_sanitize(payload), fh, sort_keys=True, indent=1)
            fh.write("\n")


def _resolve(args, command: str) -> ExperimentConfig:
    """Merge defaults, an optional config file, and CLI flags (flags win)."""
    base = ExperimentConfig(command=command)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        loaded["command"] = command
        base = ExperimentConfig.from_dict(loaded)

    for section, keys in (
        ("model", ModelConfig().to_dict().keys()),
        ("translator", TranslatorConfig().to_dict().keys()),
        ("train", TrainConfig().to_dict().keys()),
        ("data", DEFAULT_DATA.keys()),
    ):
        target = getattr(base, section)
        for key in keys:
            flag = getattr(args, f"{section}_{key}", None)
            if flag is not None:
                target[key] = flag
    if getattr(args, "recipe", None) is not None:
        base.recipe = args.recipe
    if getattr(args, "seed", None) is not None:
        base.seed = args.seed
    if getattr(args, "out", None) is not None:
        base.out_dir = args.out

    env_seed = os.environ.get("KVBABEL_SEED")
    if env_seed is not None:
        base.seed = int(env_seed)
    base.train["seed"] = base.seed
    return base


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--out", help="run directory")
    p.add_argument("--seed", type=int, help="run seed (KVBABEL_SEED overrides)")
    p.add_argument("--train-total-steps", dest="train_total_steps", type=int)
    p.add_argument("--train-warmup-steps", dest="train_warmup_steps", type=int)
    p.add_argument("--train-peak-lr", dest="train_peak_lr", type=float)
    p.add_argument("--train-batch-size", dest="train_batch_size", type=int)
    p.add_argument("--train-prefix-len", dest="train_prefix_len", type=int)
    p.add_argument("--train-seq-len", dest="train_seq_len", type=int)
    p.add_argument("--train-eval-every", dest="train_eval_every", type=int)
    p.add_argument("--train-paths-per-step", dest="train_paths_per_step", type=int)
    p.add_argument("--train-recon-weight", dest="train_recon_weight", type=float)
    p.add_argument("--model-num-layers", dest="model_num_layers", type=int)
    p.add_argument("--model-d-model", dest="model_d_model", type=int)
    p.add_argument("--translator-q-dim", dest="translator_q_dim", type=int)
    p.add_argument(
        "--translator-embed-dim-factor", dest="translator_embed_dim_factor", type=float
    )
    p.add_argument(
        "--translator-translation-dim-factor",
        dest="translator_translation_dim_factor",
        type=float,
    )
    p.add_argument("--data-train-tokens", dest="data_train_tokens", type=int)
    p.add_argument("--data-eval-tokens", dest="data_eval_tokens", type=int)
    p.add_argument("--data-echo-period", dest="data_echo_period", type=int)
    p.add_argument("--data-echo-boost", dest="data_echo_boost", type=float)


def _train_stream(cfg: ExperimentConfig, run: RunDirectory) -> np.ndarray:
    specs = cfg.language_specs()
    tcfg = cfg.train_config()
    if len(specs) == 1:
        cache = run.path("checkpoints", "train_corpus.kvcc")
        return ensure_corpus(cache, specs[0], cfg.data["train_tokens"], cfg.data["train_corpus_seed"])
    return mixture_stream(
        specs, cfg.data["weights"], cfg.data["train_tokens"], tcfg.seq_len,
        cfg.data["train_corpus_seed"],
    )


def _eval_batches(cfg: ExperimentConfig, lang_index: int = 0):
    specs = cfg.language_specs()
    tcfg = cfg.train_config()
    stream = gen_corpus(
        specs[lang_index], cfg.data["eval_tokens"], cfg.data["eval_corpus_seed"]
    )
    return eval_windows(
        stream, tcfg.batch_size, tcfg.seq_len, tcfg.prefix_len, cfg.data["eval_batches"]
    )


# -- pretrain ------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    cfg = _resolve(args, "pretrain")
    with RunDirectory(cfg.out_dir) as run:
        run.write_config(cfg)
        tcfg = cfg.train_config()
        rows = []

        def fit(model, steps, stream_seed_tag, index):
            stream = _train_stream(cfg, run)
            batches = make_batches(
                stream, tcfg.batch_size, tcfg.seq_len, tcfg.prefix_len,
                derive_seed(cfg.seed, stream_seed_tag),
            )
            fit_cfg = TrainConfig.from_dict({**tcfg.to_dict(), "total_steps": steps})
            rows.extend(train_language_model(model, batches, fit_cfg, model_index=index))
            return model.freeze()

        if cfg.recipe == "seeds":
            n = int(cfg.extras.get("num_models", args.num_models or 2))
            for i in range(n):
                model = init_model(cfg.model_config(), derive_seed(cfg.seed, f"model{i}"))
                fit(model, tcfg.total_steps, f"data{i}", i)
                save_model(run.path("checkpoints", f"model_{i}.kvbl"), model)
        elif cfg.recipe == "sizes":
            small = init_model(cfg.model_config(), derive_seed(cfg.seed, "model-small"))
            fit(small, tcfg.total_steps, "data-small", 0)
            save_model(run.path("checkpoints", "model_small.kvbl"), small)
            big_cfg = ModelConfig.from_dict(
                {**cfg.model, "num_layers": cfg.model["num_layers"] * 2}
            )
            big = init_model(big_cfg, derive_seed(cfg.seed, "model-large"))
            fit(big, tcfg.total_steps * 2, "data-large", 1)  # more data for the bigger model
            save_model(run.path("checkpoints", "model_large.kvbl"), big)
        elif cfg.recipe == "checkpoints":
            model = init_model(cfg.model_config(), derive_seed(cfg.seed, "model"))
            stream = _train_stream(cfg, run)
            batches = make_batches(
                stream, tcfg.batch_size, tcfg.seq_len, tcfg.prefix_len,
                derive_seed(cfg.seed, "data"),
            )
            half = TrainConfig.from_dict(
                {**tcfg.to_dict(), "total_steps": tcfg.total_steps // 2,
                 "warmup_steps": min(tcfg.warmup_steps, tcfg.total_steps // 2)}
            )
            rows.extend(train_language_model(model, batches, half, model_index=0))
            mid = init_model(model.config, 0)
            for (_, src), (_, dst) in zip(model.named_parameters(), mid.named_parameters()):
                dst.data[...] = src.data
            save_model(run.path("checkpoints", "model_mid.kvbl"), mid.freeze())
            rows.extend(train_language_model(model, batches, half, model_index=1))
            save_model(run.path("checkpoints", "model_final.kvbl"), model.freeze())
        elif cfg.recipe == "finetune-split":
            if not args.parent:
                raise ConfigError("finetune-split needs --parent checkpoint")
            specs = cfg.language_specs()
            if len(specs) < 2:
                raise ConfigError("finetune-split needs at least two data languages")
            for i in range(2):
                model = load_model(args.parent)
                model.unfreeze()
                stream = gen_corpus(
                    specs[i], cfg.data["train_tokens"],
                    derive_seed(cfg.data["train_corpus_seed"], f"ft{i}"),
                )
                batches = make_batches(
                    stream, tcfg.batch_size, tcfg.seq_len, tcfg.prefix_len,
                    derive_seed(cfg.seed, f"ft-data{i}"),
                )
                rows.extend(train_language_model(model, batches, tcfg, model_index=i))
                save_model(run.path("checkpoints", f"model_ft{i}.kvbl"), model.freeze())
        else:
            raise ConfigError(f"unknown pretrain recipe {cfg.recipe!r}")

        write_metrics_csv(run.path("metrics.csv"), rows)
    return 0


# -- translator training --------------------------------------------------------


def cmd_train_translator(args) -> int:
    cfg = _resolve(args, "train-translator")
    cfg.extras["baseline"] = args.baseline
    cfg.extras["models"] = list(args.models)
    with RunDirectory(cfg.out_dir) as run:
        run.write_config(cfg)
        models = [load_model(p) for p in args.models]
        for m in models:
            m.freeze()
        tcfg = cfg.train_config()
        tr_cfg = cfg.translator_config()
        ev = _eval_batches(cfg)

        matrices = {}
        base_pool = build_pool(models, tr_cfg, seed=cfg.seed)
        matrices["none"] = _matrix_json(evaluate_paths(base_pool, ev, mode="none"))
        try:
            identity = evaluate_paths(base_pool, ev, mode="identity")
        except KvBabelError:
            identity = np.full((len(models), len(models)), np.nan)
        matrices["identity"] = _matrix_json(identity)

        if args.baseline == "identity":
            run.write_json("matrix.json", {"modes": matrices, "untrained_paths": []})
            write_metrics_csv(run.path("metrics.csv"), [])
            return 0

        kind = "linear" if args.baseline == "linear" else "xattn"
        pool = build_pool(models, tr_cfg, seed=cfg.seed, kind=kind)
        stream = _train_stream(cfg, run)
        batches = make_batches(
            stream, tcfg.batch_size, tcfg.seq_len, tcfg.prefix_len,
            derive_seed(cfg.seed, "translator-data"),
        )
        rows = train_translators(
            pool, batches, tcfg, eval_batches=ev,
            metrics_path=run.path("metrics.csv"),
        )
        label = "translator" if kind == "xattn" else "linear"
        matrices[label] = _matrix_json(final_eval_matrix(rows, pool.num_models))
        save_pool(run.path("checkpoints", "pool.kvbl"), pool, tr_cfg)
        run.write_json("matrix.json", {"modes": matrices, "untrained_paths": []})
    return 0


def cmd_extend(args) -> int:
    cfg = _resolve(args, "extend")
    cfg.extras["pool"] = args.pool
    cfg.extras["new_model"] = args.new_model
    cfg.extras["holdout"] = args.holdout
    with RunDirectory(cfg.out_dir) as run:
        run.write_config(cfg)
        pool, tr_cfg = load_pool(os.path.join(args.pool, "checkpoints", "pool.kvbl"))
        new_model = load_model(args.new_model)
        new_model.freeze()
        tcfg = cfg.train_config()
        partners = [i for i in range(pool.num_models) if i != args.holdout]
        stream = _train_stream(cfg, run)
        batches = make_batches(
            stream, tcfg.batch_size, tcfg.seq_len, tcfg.prefix_len,
            derive_seed(cfg.seed, "extension-data"),
        )
        ev = _eval_batches(cfg)
        bigger, rows = extend_pool(
            pool, new_model, tr_cfg, tcfg, batches,
            train_partners=partners, eval_batches=ev,
            metrics_path=run.path("metrics.csv"),
        )
        new_index = bigger.num_models - 1
        untrained = []
        if 0 <= args.holdout < pool.num_models:
            untrained = [[new_index, args.holdout], [args.holdout, new_index]]
        matrices = {
            "none": _matrix_json(evaluate_paths(bigger, ev, mode="none")),
            "translator": _matrix_json(final_eval_matrix(rows, bigger.num_models)),
        }
        save_pool(run.path("checkpoints", "pool.kvbl"), bigger, tr_cfg)
        run.write_json(
            "matrix.json", {"modes": matrices, "untrained_paths": untrained}
        )
    return 0


# -- module portability -----------------------------------------------------------


def cmd_meta(args) -> int:
    cfg = _resolve(args, "meta")
    cfg.extras.update(
        {
            "pool": args.pool,
            "adapters": args.adapters,
            "num_train_tasks": args.num_train_tasks,
            "num_test_tasks": args.num_test_tasks,
            "meta_steps": args.meta_steps,
            "prompt_len": args.prompt_len,
            "prompt_steps": args.prompt_steps,
            "src": args.src,
            "dst": args.dst,
        }
    )
    with RunDirectory(cfg.out_dir) as run:
        run.write_config(cfg)
        pool, tr_cfg = load_pool(os.path.join(args.pool, "checkpoints", "pool.kvbl"))
        if args.adapters == "random":
            pool = build_pool(pool.models, tr_cfg, seed=derive_seed(cfg.seed, "random-adapters"))
        src, dst = args.src, args.dst
        gen_seed = derive_seed(cfg.seed, "tasks")
        train_tasks = gen_prompt_tasks(
            pool.models[src], args.num_train_tasks, seed=gen_seed,
            completion_len=args.completion_len,
        )
        test_tasks = gen_prompt_tasks(
            pool.models[src], args.num_test_tasks,
            seed=derive_seed(cfg.seed, "test-tasks"),
            completion_len=args.completion_len,
        )
        bank = build_prompt_bank(
            pool.models[src], train_tasks, p=args.prompt_len,
            steps=args.prompt_steps, seed=derive_seed(cfg.seed, "bank"),
            cache_path=run.path("checkpoints", "prompt_bank.kvbl"),
        )
        before = meta_eval_portability(
            pool, src, dst, test_tasks, p=args.prompt_len,
            prompt_steps=args.prompt_steps, seed=derive_seed(cfg.seed, "eval-before"),
        )
        rows = meta_train_portability(
            pool, src, dst, train_tasks, bank, steps=args.meta_steps,
            seed=derive_seed(cfg.seed, "meta"),
            update="into" if args.into_only else "all",
        )
        after = meta_eval_portability(
            pool, src, dst, test_tasks, p=args.prompt_len,
            prompt_steps=args.prompt_steps, seed=derive_seed(cfg.seed, "eval-before"),
        )
        write_metrics_csv(run.path("metrics.csv"), rows)
        os.makedirs(run.path("report"), exist_ok=True)
        run.write_json(
            os.path.join("report", "meta_summary.json"),
            {
                "src": src,
                "dst": dst,
                "num_test_tasks": args.num_test_tasks,
                "before_meta_training": before,
                "after_meta_training": after,
            },
        )
        save_pool(run.path("checkpoints", "pool.kvbl"), pool, tr_cfg)
    return 0


# -- evaluation and reporting -------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _resolve(args, "eval")
    cfg.extras["pool"] = args.pool
    cfg.extras["modes"] = args.modes
    with RunDirectory(cfg.out_dir) as run:
        run.write_config(cfg)
        pool, _ = load_pool(os.path.join(args.pool, "checkpoints", "pool.kvbl"))
        ev = _eval_batches(cfg)
        matrices = {}
        for mode in args.modes.split(","):
            mode = mode.strip()
            matrices[mode] = _matrix_json(evaluate_paths(pool, ev, mode=mode))
        run.write_json("matrix.json", {"modes": matrices, "untrained_paths": []})
    return 0


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def cmd_report(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    table_rows = []
    for run_dir in args.runs:
        name = os.path.basename(os.path.normpath(run_dir))
        config_path = os.path.join(run_dir, "config.json")
        recipe, seed = "", 0
        if os.path.exists(config_path):
            with open(config_path) as fh:
                conf = json.load(fh)
            recipe, seed = conf.get("recipe", ""), conf.get("seed", 0)

        metrics_path = os.path.join(run_dir, "metrics.csv")
        if os.path.exists(metrics_path):
            rows = [r for r in read_metrics_csv(metrics_path) if r.loss_kind == "eval_nll"]
            rows.sort(key=lambda r: (r.step, r.path_src, r.path_dst))
            fig_path = os.path.join(args.out, f"figure_{name}.csv")
            with open(fig_path, "w") as fh:
                fh.write("step,path_src,path_dst,eval_nll\n")
                for r in rows:
                    fh.write(f"{r.step},{r.path_src},{r.path_dst},{_fmt(r.value)}\n")

        matrix_path = os.path.join(run_dir, "matrix.json")
        if not os.path.exists(matrix_path):
            continue
        with open(matrix_path) as fh:
            payload = json.load(fh)
        modes = payload.get("modes", {})
        none_m = modes.get("none")
        n = len(none_m) if none_m else len(next(iter(modes.values()), []))

        def off_diag_mean(matrix, target):
            if matrix is None:
                return None
            vals = [
                matrix[i][target]
                for i in range(len(matrix))
                if i != target and matrix[i][target] is not None
            ]
            return sum(vals) / len(vals) if vals else None

        for target in range(n):
            table_rows.append(
                {
                    "recipe": recipe,
                    "seed": seed,
                    "run": name,
                    "target": target,
                    "eval_loss": none_m[target][target] if none_m else None,
                    "identity": off_diag_mean(modes.get("identity"), target),
                    "linear": off_diag_mean(modes.get("linear"), target),
                    "translator": off_diag_mean(modes.get("translator"), target),
                }
            )

    table_rows.sort(key=lambda r: (r["recipe"], r["seed"], r["run"], r["target"]))
    table_path = os.path.join(args.out, "table_final.csv")
    with open(table_path, "w") as fh:
        fh.write("recipe,seed,run,target,eval_loss,identity,linear,translator\n")
        for r in table_rows:
            fh.write(
                f"{r['recipe']},{r['seed']},{r['run']},{r['target']},"
                f"{_fmt(r['eval_loss'])},{_fmt(r['identity'])},"
                f"{_fmt(r['linear'])},{_fmt(r['translator'])}\n"
            )
    return 0


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvbabel",
        description="Teach a pool of frozen toy language models to share k-v caches.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train base models (recipes: seeds, sizes, checkpoints, finetune-split)")
    _add_common_flags(p)
    p.add_argument("--recipe", choices=["seeds", "sizes", "checkpoints", "finetune-split"])
    p.add_argument("--num-models", type=int, default=None)
    p.add_argument("--parent", help="parent checkpoint for finetune-split")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-translator", help="train adapters over a pool of checkpoints")
    _add_common_flags(p)
    p.add_argument("--models", nargs="+", required=True, help="model checkpoint paths")
    p.add_argument("--baseline", choices=["xattn", "linear", "identity"], default="xattn")
    p.set_defaults(func=cmd_train_translator)

    p = sub.add_parser("extend", help="add one model to a trained pool")
    _add_common_flags(p)
    p.add_argument("--pool", required=True, help="run dir containing checkpoints/pool.kvbl")
    p.add_argument("--new-model", required=True)
    p.add_argument("--holdout", type=int, default=0, help="incumbent excluded from training paths")
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("meta", help="meta-train adapters for soft-prompt portability")
    _add_common_flags(p)
    p.add_argument("--pool", required=True)
    p.add_argument("--adapters", choices=["pretrained", "random"], default="pretrained")
    p.add_argument("--num-train-tasks", type=int, default=200)
    p.add_argument("--num-test-tasks", type=int, default=50)
    p.add_argument("--meta-steps", type=int, default=400)
    p.add_argument("--prompt-len", type=int, default=8)
    p.add_argument("--prompt-steps", type=int, default=120)
    p.add_argument("--completion-len", type=int, default=24)
    p.add_argument("--src", type=int, default=0)
    p.add_argument("--dst", type=int, default=1)
    p.add_argument("--into-only", action="store_true", help="meta-update only into-adapters")
    p.set_defaults(func=cmd_meta)

    p = sub.add_parser("eval", help="evaluate a saved pool on a fresh corpus")
    _add_common_flags(p)
    p.add_argument("--pool", required=True)
    p.add_argument("--modes", default="none,trained", help="comma list: none,identity,trained,linear")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render metrics and matrices as CSV tables")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KvBabelError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
