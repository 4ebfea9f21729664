"""Experiment pipelines at micro-micro scale: shapes, idempotence, provenance."""

import json
from pathlib import Path

import numpy as np
import pytest

from sptk.corpus import build_corpus, save_corpus, write_dataset
from sptk.encoder.model import EncoderConfig
from sptk.errors import ConfigError, InputError
from sptk.finetune.loop import FinetuneConfig
from sptk.pretrain import PretrainRunConfig
from sptk.xprunner.config import ExperimentConfig, load_experiment_config
from sptk.xprunner.experiments import run, verify_provenance
from sptk.xprunner.synth import SyntheticDatasetSpec, gen_synthetic_dataset

TINY_MODEL = dict(layers=1, hidden=16, heads=2, ffn_dim=32, vocab_size=300,
                  max_positions=64, dropout=0.0)
TINY_PRETRAIN = dict(steps=20, warmup_steps=2, batch_size=4, seq_len=64,
                     peak_lr=1e-3)
TINY_FINETUNE = dict(epochs=5, batch_size=16, learning_rate=2e-3,
                     max_seq_len=64, patience=5)


def make_dataset_dir(tmp_path, name, seed=0, examples=200):
    spec = SyntheticDatasetSpec(vocabulary_size=120, examples=examples,
                                classes=2, noise_rate=0.0, seed=seed,
                                topic_fraction=0.6)
    ds = gen_synthetic_dataset(spec)
    ds.name = name
    path = tmp_path / name
    write_dataset(ds, path)
    return path, ds


def make_reference_corpus(tmp_path, seed=7, examples=300):
    spec = SyntheticDatasetSpec(vocabulary_size=150, examples=examples,
                                classes=2, noise_rate=0.0, seed=seed)
    ds = gen_synthetic_dataset(spec)
    corpus = build_corpus(ds, "standard", seed=seed)
    path = tmp_path / "reference_corpus.txt"
    save_corpus(corpus, path)
    return path


def tiny_config(tmp_path, kind, datasets, out_name, **kw):
    return ExperimentConfig(
        kind=kind,
        datasets=[str(d) for d in datasets],
        out=str(tmp_path / out_name),
        seeds=kw.pop("seeds", [0]),
        model=EncoderConfig(**TINY_MODEL),
        pretrain=PretrainRunConfig(**TINY_PRETRAIN),
        finetune=FinetuneConfig(**TINY_FINETUNE),
        **kw,
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("xp")
    d0, _ = make_dataset_dir(tmp_path, "synth0", seed=0)
    d1, _ = make_dataset_dir(tmp_path, "synth1", seed=1)
    ref = make_reference_corpus(tmp_path)
    return tmp_path, d0, d1, ref


class TestSelfPretrainPipeline:
    def test_summary_columns_and_idempotence(self, workspace):
        tmp_path, d0, _, ref = workspace
        config = tiny_config(tmp_path, "self_pretrain", [d0], "out_self",
                             reference_corpus=str(ref))
        out = run(config, threads=1)
        summary = (out / "reports/summary.csv").read_text()
        header = summary.splitlines()[0].split(",")
        assert header == ["dataset", "seed", "rand_init", "self_pretrain",
                          "reference", "benefit_pct"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "complete"
        before = summary
        run(config, threads=1)  # no-op rerun
        assert (out / "reports/summary.csv").read_text() == before

    def test_provenance_closure(self, workspace):
        tmp_path, d0, _, ref = workspace
        out = tmp_path / "out_self"
        info = verify_provenance(out)
        assert info["status"] == "complete"
        assert info["stages"] >= 4

    def test_provenance_detects_tampering(self, workspace):
        tmp_path, d0, _, ref = workspace
        out = tmp_path / "out_self"
        victim = next((out / "corpora").glob("*.txt"))
        original = victim.read_text()
        victim.write_text(original + "tampered\n")
        with pytest.raises(InputError):
            verify_provenance(out)
        victim.write_text(original)

    def test_different_config_same_dir_rejected(self, workspace):
        tmp_path, d0, _, ref = workspace
        config = tiny_config(tmp_path, "self_pretrain", [d0], "out_self",
                             reference_corpus=str(ref), seeds=[5])
        with pytest.raises(InputError):
            run(config, threads=1)


class TestRandInitPipeline:
    def test_summary(self, workspace):
        tmp_path, d0, _, _ = workspace
        config = tiny_config(tmp_path, "rand_init", [d0], "out_rand",
                             seeds=[0, 1])
        out = run(config, threads=1)
        rows = (out / "reports/summary.csv").read_text().splitlines()
        assert rows[0] == "dataset,seed,rand_init"
        assert len(rows) == 1 + 2 + 1  # per-seed rows + mean


class TestWikisubPipeline:
    def test_runs_with_size_matched_corpus(self, workspace):
        tmp_path, d0, _, ref = workspace
        config = tiny_config(tmp_path, "wikisub", [d0], "out_wikisub",
                             reference_corpus=str(ref))
        out = run(config, threads=1)
        header = (out / "reports/summary.csv").read_text().splitlines()[0]
        assert header.split(",")[3] == "wikisub"
        assert (out / "corpora/wikisub-s0.txt").exists()


class TestTaptPipeline:
    def test_tapt_needs_base(self, workspace):
        tmp_path, d0, _, _ = workspace
        config = tiny_config(tmp_path, "tapt", [d0], "out_tapt_bad")
        with pytest.raises(ConfigError):
            run(config, threads=1)

    def test_tapt_from_reference(self, workspace):
        tmp_path, d0, _, ref = workspace
        config = tiny_config(tmp_path, "tapt", [d0], "out_tapt",
                             reference_corpus=str(ref), tapt_epochs=1)
        out = run(config, threads=1)
        header = (out / "reports/summary.csv").read_text().splitlines()[0]
        assert header.split(",")[3] == "tapt"
        assert (out / "checkpoints/tapt-s0.ckpt").exists()


def matrix_config(tmp_path, d0, d1, ref, out_name="out_matrix"):
    # longer finetuning than the other tiny pipelines so the random-init and
    # reference accuracies separate and the benefit denominators are nonzero
    return ExperimentConfig(
        kind="cross_matrix",
        datasets=[str(d0), str(d1)],
        out=str(tmp_path / out_name),
        seeds=[0],
        reference_corpus=str(ref),
        model=EncoderConfig(**TINY_MODEL),
        pretrain=PretrainRunConfig(**{**TINY_PRETRAIN, "steps": 60,
                                      "warmup_steps": 4, "peak_lr": 2e-3}),
        finetune=FinetuneConfig(**{**TINY_FINETUNE, "epochs": 8}),
    )


class TestCrossMatrix:
    def test_two_by_two_matrix_and_shapes(self, workspace):
        tmp_path, d0, d1, ref = workspace
        config = matrix_config(tmp_path, d0, d1, ref)
        out = run(config, threads=1)
        matrix = json.loads((out / "reports/benefit_matrix.json").read_text())
        assert matrix["sources"] == ["synth0", "synth1"]
        assert matrix["targets"] == ["synth0", "synth1"]
        values = np.asarray(matrix["values"])
        assert values.shape == (2, 2)
        assert np.isfinite(values).all()
        csv_lines = (out / "reports/benefit_matrix.csv").read_text().splitlines()
        assert len(csv_lines) == 3
        raw = (out / "reports/raw_metrics.csv").read_text().splitlines()
        assert raw[0].split(",")[:3] == ["pretrain\\finetune", "synth0", "synth1"]

    def test_rerun_byte_identical(self, workspace):
        tmp_path, d0, d1, ref = workspace
        config = matrix_config(tmp_path, d0, d1, ref)
        before = (Path(config.out) / "reports/benefit_matrix.csv").read_bytes()
        run(config, threads=1)
        after = (Path(config.out) / "reports/benefit_matrix.csv").read_bytes()
        assert before == after

    def test_requires_reference(self, workspace):
        tmp_path, d0, d1, _ = workspace
        config = tiny_config(tmp_path, "cross_matrix", [d0, d1], "out_matrix2")
        with pytest.raises(ConfigError):
            run(config, threads=1)

    def test_worker_pool_matches_sequential(self, workspace):
        tmp_path, d0, d1, ref = workspace
        pooled = matrix_config(tmp_path, d0, d1, ref, out_name="out_matrix_mp")
        run(pooled, threads=2)
        seq = (tmp_path / "out_matrix/reports/benefit_matrix.csv").read_bytes()
        par = (tmp_path / "out_matrix_mp/reports/benefit_matrix.csv").read_bytes()
        assert seq == par


class TestSplitAB:
    def test_table3_shaped_grid(self, workspace):
        tmp_path, d0, _, _ = workspace
        config = tiny_config(tmp_path, "split_ab", [d0], "out_split")
        out = run(config, threads=1)
        lines = (out / "reports/split_ab.csv").read_text().splitlines()
        assert lines[0] == "pretrain\\finetune,A,B"
        assert lines[1].startswith("A,") and lines[2].startswith("B,")
        assert len(lines) == 3
        for line in lines[1:]:
            cells = line.split(",")[1:]
            assert len(cells) == 2
            for c in cells:
                assert 0.0 <= float(c) <= 1.0


class TestSizeSweep:
    def test_single_point_reduces_to_three_runs(self, workspace):
        tmp_path, d0, _, ref = workspace
        config = tiny_config(tmp_path, "size_sweep", [d0], "out_sweep1",
                             reference_corpus=str(ref), layer_counts=[1])
        out = run(config, threads=1)
        manifest = json.loads((out / "manifest.json").read_text())
        finetunes = [s for s in manifest["stage_order"]
                     if s.startswith("finetune:")]
        assert len(finetunes) == 3  # rand / self / reference
        rows = (out / "reports/sweep.csv").read_text().splitlines()
        assert rows[0] == "axis,size,rand_init,self_pretrain,reference"
        assert len(rows) == 2

    def test_sweep_rows_cover_both_axes(self, workspace):
        import time
        tmp_path, d0, _, _ = workspace
        config = tiny_config(tmp_path, "size_sweep", [d0], "out_sweep2",
                             layer_counts=[1, 2], hidden_sizes=[16])
        t0 = time.monotonic()
        out = run(config, threads=1)
        assert time.monotonic() - t0 < 600  # micro sweeps stay desk-scale
        rows = (out / "reports/sweep.csv").read_text().splitlines()[1:]
        assert len(rows) == 3
        axes = [r.split(",")[0] for r in rows]
        assert axes == ["layers", "layers", "hidden"]


class TestConfigFiles:
    def test_ini_round_trip(self, workspace, tmp_path):
        ws, d0, _, ref = workspace
        ini = tmp_path / "exp.ini"
        ini.write_text(f"""
[experiment]
kind = self_pretrain
dataset = {d0}
reference_corpus = {ref}
seeds = 0 1
out = {tmp_path / 'results'}

[model]
layers = 1
hidden = 16
heads = 2
ffn_dim = 32
vocab_size = 300
max_positions = 64
dropout = 0.0

[pretrain]
objective = electra
steps = 20
warmup_steps = 2
batch_size = 4
seq_len = 64

[finetune]
epochs = 2
learning_rate = 3e-4 1e-5
max_seq_len = 64
""")
        config = load_experiment_config(ini)
        assert config.kind == "self_pretrain"
        assert config.seeds == [0, 1]
        assert config.model.hidden == 16
        assert config.pretrain.steps == 20
        assert config.finetune.lr_grid() == [3e-4, 1e-5]

    def test_unknown_key_rejected(self, tmp_path):
        ini = tmp_path / "bad.ini"
        ini.write_text("[experiment]\nkind = rand_init\nbogus = 1\nout = x\n")
        with pytest.raises(ConfigError):
            load_experiment_config(ini)

    def test_missing_file_is_input_error(self, tmp_path):
        with pytest.raises(InputError) as exc:
            load_experiment_config(tmp_path / "nope.ini")
        assert "nope.ini" in str(exc.value)
