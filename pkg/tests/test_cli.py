"""End-to-end tests for the command-line interface on tiny configurations."""

import json
import os

import numpy as np
import pytest

from kvbabel.cli import main

TINY_MODEL = {
    "vocab_size": 64, "d_model": 16, "num_layers": 2, "num_heads": 2,
    "num_kv_heads": 1, "head_dim": 4, "ff_dim": 32, "max_seq_len": 64,
    "rope_base": 10000.0,
}
TINY_TRAIN = {
    "total_steps": 12, "warmup_steps": 2, "init_lr": 1e-6, "peak_lr": 1e-3,
    "batch_size": 4, "clip_norm": 1.0, "paths_per_step": 0,
    "recon_weight": 0.0, "lm_weight": 1.0, "seed": 3, "prefix_len": 8,
    "seq_len": 16, "eval_every": 50, "eval_batches": 2,
    "weight_decay": 1e-4, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
}
TINY_TRANS = {
    "q_dim": 16, "embed_dim_factor": 2.0, "translation_dim_factor": 1.0,
    "xattn_num_heads": 2, "xattn_head_dim": 4, "output_activation": "mid",
}
TINY_DATA = {
    "vocab_size": 64, "languages": [{"transition_seed": 1}], "weights": [1.0],
    "temperature": 1.0, "echo_period": 8, "echo_boost": 4.0,
    "train_tokens": 8000, "train_corpus_seed": 100,
    "eval_tokens": 2000, "eval_corpus_seed": 999, "eval_batches": 2,
}


def write_config(tmp_path, name="config.json", **overrides):
    cfg = {
        "command": "any", "recipe": "seeds", "seed": 3, "out_dir": "unused",
        "model": dict(TINY_MODEL), "translator": dict(TINY_TRANS),
        "train": dict(TINY_TRAIN), "data": dict(TINY_DATA), "extras": {},
    }
    cfg.update(overrides)
    path = str(tmp_path / name)
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return path


@pytest.fixture(scope="module")
def pretrain_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    out = str(tmp / "pretrain")
    assert main(["pretrain", "--config", cfg, "--out", out, "--num-models", "2"]) == 0
    return out


@pytest.fixture(scope="module")
def translator_dir(pretrain_dir, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli-tr")
    cfg = write_config(tmp)
    out = str(tmp / "translator")
    models = [
        os.path.join(pretrain_dir, "checkpoints", f"model_{i}.kvbl") for i in range(2)
    ]
    assert main(
        ["train-translator", "--config", cfg, "--out", out, "--models", *models]
    ) == 0
    return out


class TestPretrain:
    def test_writes_config_and_checkpoints(self, pretrain_dir):
        assert os.path.exists(os.path.join(pretrain_dir, "config.json"))
        assert os.path.exists(os.path.join(pretrain_dir, "metrics.csv"))
        for i in range(2):
            assert os.path.exists(
                os.path.join(pretrain_dir, "checkpoints", f"model_{i}.kvbl")
            )

    def test_seeds_differ_between_models(self, pretrain_dir):
        from kvbabel.checkpoint import load_model

        m0 = load_model(os.path.join(pretrain_dir, "checkpoints", "model_0.kvbl"))
        m1 = load_model(os.path.join(pretrain_dir, "checkpoints", "model_1.kvbl"))
        diffs = [
            not np.array_equal(a.data, b.data)
            for (_, a), (_, b) in zip(m0.named_parameters(), m1.named_parameters())
        ]
        assert any(diffs)

    def test_checkpoints_recipe_emits_mid_and_final(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "ckpts")
        assert main(
            ["pretrain", "--config", cfg, "--out", out, "--recipe", "checkpoints"]
        ) == 0
        assert os.path.exists(os.path.join(out, "checkpoints", "model_mid.kvbl"))
        assert os.path.exists(os.path.join(out, "checkpoints", "model_final.kvbl"))

    def test_sizes_recipe_doubles_layers(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "sizes")
        assert main(["pretrain", "--config", cfg, "--out", out, "--recipe", "sizes"]) == 0
        from kvbabel.checkpoint import load_model

        small = load_model(os.path.join(out, "checkpoints", "model_small.kvbl"))
        large = load_model(os.path.join(out, "checkpoints", "model_large.kvbl"))
        assert large.config.num_layers == 2 * small.config.num_layers

    def test_finetune_split_two_experts(self, pretrain_dir, tmp_path):
        cfg = write_config(
            tmp_path,
            data={**TINY_DATA, "languages": [{"transition_seed": 1}, {"transition_seed": 2}],
                  "weights": [0.5, 0.5]},
        )
        out = str(tmp_path / "ft")
        parent = os.path.join(pretrain_dir, "checkpoints", "model_0.kvbl")
        assert main(
            ["pretrain", "--config", cfg, "--out", out, "--recipe", "finetune-split",
             "--parent", parent]
        ) == 0
        assert os.path.exists(os.path.join(out, "checkpoints", "model_ft0.kvbl"))
        assert os.path.exists(os.path.join(out, "checkpoints", "model_ft1.kvbl"))

    def test_env_seed_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KVBABEL_SEED", "777")
        cfg = write_config(tmp_path)
        out = str(tmp_path / "envseed")
        assert main(
            ["pretrain", "--config", cfg, "--out", out, "--num-models", "1",
             "--train-total-steps", "2"]
        ) == 0
        snap = json.load(open(os.path.join(out, "config.json")))
        assert snap["seed"] == 777


class TestTranslator:
    def test_outputs(self, translator_dir):
        assert os.path.exists(os.path.join(translator_dir, "metrics.csv"))
        matrix = json.load(open(os.path.join(translator_dir, "matrix.json")))
        assert set(matrix["modes"]) >= {"none", "identity", "translator"}
        none_m = matrix["modes"]["none"]
        assert none_m[0][1] is None  # off-diagonal empty in base mode
        assert isinstance(matrix["modes"]["translator"][0][1], float)
        assert os.path.exists(os.path.join(translator_dir, "checkpoints", "pool.kvbl"))

    def test_identity_baseline_mode_skips_training(self, pretrain_dir, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "ident")
        models = [
            os.path.join(pretrain_dir, "checkpoints", f"model_{i}.kvbl")
            for i in range(2)
        ]
        assert main(
            ["train-translator", "--config", cfg, "--out", out,
             "--models", *models, "--baseline", "identity"]
        ) == 0
        matrix = json.load(open(os.path.join(out, "matrix.json")))
        assert "translator" not in matrix["modes"]
        assert not os.path.exists(os.path.join(out, "checkpoints", "pool.kvbl"))

    def test_linear_baseline(self, pretrain_dir, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "linear")
        models = [
            os.path.join(pretrain_dir, "checkpoints", f"model_{i}.kvbl")
            for i in range(2)
        ]
        assert main(
            ["train-translator", "--config", cfg, "--out", out,
             "--models", *models, "--baseline", "linear"]
        ) == 0
        matrix = json.load(open(os.path.join(out, "matrix.json")))
        assert "linear" in matrix["modes"]

    def test_q_constraint_fails_before_training(self, pretrain_dir, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "badq")
        models = [
            os.path.join(pretrain_dir, "checkpoints", f"model_{i}.kvbl")
            for i in range(2)
        ]
        rc = main(
            ["train-translator", "--config", cfg, "--out", out,
             "--models", *models, "--translator-q-dim", "15"]
        )
        assert rc == 2
        assert not os.path.exists(os.path.join(out, "metrics.csv"))


class TestExtendAndEval:
    def test_extend_marks_untrained_paths(self, translator_dir, pretrain_dir, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "extended")
        new_model = os.path.join(pretrain_dir, "checkpoints", "model_1.kvbl")
        assert main(
            ["extend", "--config", cfg, "--out", out, "--pool", translator_dir,
             "--new-model", new_model, "--holdout", "0"]
        ) == 0
        matrix = json.load(open(os.path.join(out, "matrix.json")))
        assert [2, 0] in matrix["untrained_paths"]
        assert [0, 2] in matrix["untrained_paths"]
        assert len(matrix["modes"]["translator"]) == 3

    def test_eval_command(self, translator_dir, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "evalrun")
        assert main(
            ["eval", "--config", cfg, "--out", out, "--pool", translator_dir,
             "--modes", "none,trained"]
        ) == 0
        matrix = json.load(open(os.path.join(out, "matrix.json")))
        assert set(matrix["modes"]) == {"none", "trained"}


class TestMeta:
    def test_meta_run_emits_summary(self, translator_dir, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "meta")
        assert main(
            ["meta", "--config", cfg, "--out", out, "--pool", translator_dir,
             "--num-train-tasks", "3", "--num-test-tasks", "2",
             "--meta-steps", "3", "--prompt-len", "4", "--prompt-steps", "4",
             "--completion-len", "8"]
        ) == 0
        summary = json.load(open(os.path.join(out, "report", "meta_summary.json")))
        for phase in ("before_meta_training", "after_meta_training"):
            for kind in ("translated", "random", "direct"):
                assert len(summary[phase][kind]["per_task"]) == 2


class TestReport:
    def test_report_idempotent_and_schema(self, translator_dir, tmp_path):
        out1 = str(tmp_path / "report1")
        out2 = str(tmp_path / "report2")
        for out in (out1, out2):
            assert main(["report", "--runs", translator_dir, "--out", out]) == 0
        table1 = open(os.path.join(out1, "table_final.csv"), "rb").read()
        table2 = open(os.path.join(out2, "table_final.csv"), "rb").read()
        assert table1 == table2
        header = table1.decode().splitlines()[0]
        assert header == "recipe,seed,run,target,eval_loss,identity,linear,translator"
        name = os.path.basename(os.path.normpath(translator_dir))
        assert os.path.exists(os.path.join(out1, f"figure_{name}.csv"))


class TestLocking:
    def test_second_writer_rejected(self, tmp_path):
        from filelock import FileLock

        out = str(tmp_path / "locked")
        os.makedirs(out, exist_ok=True)
        lock = FileLock(os.path.join(out, "run.lock"))
        lock.acquire()
        try:
            cfg = write_config(tmp_path)
            rc = main(
                ["pretrain", "--config", cfg, "--out", out, "--num-models", "1",
                 "--train-total-steps", "2"]
            )
            assert rc == 2
        finally:
            lock.release()
