"""CLI contract: subcommands, exit codes, end-to-end smoke at micro scale."""

import json

import pytest

from sptk.xprunner.cli import cli

SUBCOMMANDS = ["gen-data", "build-corpus", "train-tokenizer", "pretrain",
               "tapt", "finetune", "analyze", "matrix", "sweep", "report"]


def write_ini(path, text):
    path.write_text(text)
    return str(path)


class TestArgHandling:
    def test_help_exits_zero_and_lists_subcommands(self, capsys):
        assert cli(["--help"]) == 0
        out = capsys.readouterr().out
        for name in SUBCOMMANDS:
            assert name in out

    def test_unknown_flag_exits_one(self, capsys):
        assert cli(["pretrain", "--bogus"]) == 1

    def test_unknown_subcommand_exits_one(self):
        assert cli(["frobnicate"]) == 1

    def test_missing_config_file_exits_one(self, capsys, tmp_path):
        missing = tmp_path / "absent.ini"
        assert cli(["gen-data", "--config", str(missing)]) == 1
        err = capsys.readouterr().err
        assert "absent.ini" in err

    def test_bad_config_contents_exit_one(self, tmp_path):
        ini = write_ini(tmp_path / "bad.ini",
                        "[experiment]\nkind = nonsense\nout = x\n")
        assert cli(["gen-data", "--config", ini]) == 1


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


def test_full_micro_pipeline(workdir, capsys):
    data_ini = write_ini(workdir / "data.ini", f"""
[experiment]
kind = rand_init
dataset = {workdir / 'data'}
out = {workdir / 'data'}

[synth]
vocabulary_size = 120
examples = 200
classes = 2
noise_rate = 0.0
seed = 0
topic_fraction = 0.6
""")
    assert cli(["gen-data", "--config", data_ini]) == 0
    assert (workdir / "data" / "meta.json").exists()

    corpus_ini = write_ini(workdir / "corpus.ini", f"""
[experiment]
kind = rand_init
dataset = {workdir / 'data'}
strategy = standard
out = {workdir / 'corpus.txt'}
""")
    assert cli(["build-corpus", "--config", corpus_ini]) == 0
    assert (workdir / "corpus.txt").read_text().startswith("# strategy=standard")

    tok_ini = write_ini(workdir / "tok.ini", f"""
[experiment]
kind = rand_init
dataset = {workdir / 'data'}
out = {workdir / 'tok.model'}

[model]
vocab_size = 300
""")
    assert cli(["train-tokenizer", "--config", tok_ini]) == 0
    assert (workdir / "tok.model").read_text().startswith("subword-v1")

    exp_ini = write_ini(workdir / "exp.ini", f"""
[experiment]
kind = self_pretrain
dataset = {workdir / 'data'}
out = {workdir / 'results'}
seeds = 0

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
peak_lr = 1e-3

[finetune]
epochs = 2
batch_size = 16
learning_rate = 1e-3
max_seq_len = 64
""")
    assert cli(["pretrain", "--config", exp_ini, "--threads", "1"]) == 0
    results = workdir / "results"
    assert (results / "reports" / "summary.csv").exists()
    assert (results / "checkpoints" / "self-s0.ckpt").exists()

    assert cli(["report", "--config", exp_ini, "--check"]) == 0
    out = capsys.readouterr().out
    assert "provenance ok" in out
    assert "summary.csv" in out

    ft_ini = write_ini(workdir / "ft.ini", f"""
[experiment]
kind = rand_init
dataset = {workdir / 'data'}
out = {workdir / 'ft_results'}
seeds = 0

[model]
layers = 1
hidden = 16
heads = 2
ffn_dim = 32
vocab_size = 300
max_positions = 64
dropout = 0.0

[finetune]
epochs = 2
batch_size = 16
learning_rate = 1e-3
max_seq_len = 64
""")
    assert cli(["finetune", "--config", ft_ini, "--threads", "1"]) == 0
    assert (workdir / "ft_results" / "reports" / "summary.csv").exists()


def test_analyze_command(workdir, capsys):
    results = workdir / "results"
    pred = results / "predictions" / "randinit-s0.test.jsonl"
    val = results / "predictions" / "randinit-s0.val.jsonl"
    out_json = workdir / "analysis.json"
    code = cli(["analyze", "--config", str(workdir / "exp.ini"),
                "--pred-a", str(pred), "--pred-b", str(pred),
                "--val-a", str(val), "--val-b", str(val),
                "--out", str(out_json)])
    assert code == 0
    payload = json.loads(out_json.read_text())
    assert payload["error_inconsistency"] == 0.0
    assert payload["temperature_a"] > 0


def test_sweep_command(workdir):
    sweep_ini = write_ini(workdir / "sweep.ini", f"""
[experiment]
kind = size_sweep
dataset = {workdir / 'data'}
out = {workdir / 'sweep_results'}
layer_counts = 1

[model]
layers = 1
hidden = 16
heads = 2
ffn_dim = 32
vocab_size = 300
max_positions = 64
dropout = 0.0

[pretrain]
objective = mlm
steps = 10
warmup_steps = 2
batch_size = 4
seq_len = 64

[finetune]
epochs = 1
batch_size = 16
learning_rate = 1e-3
max_seq_len = 64
""")
    assert cli(["sweep", "--config", sweep_ini, "--threads", "1"]) == 0
    assert (workdir / "sweep_results" / "reports" / "sweep.csv").exists()


def test_wrong_kind_for_subcommand(workdir):
    assert cli(["tapt", "--config", str(workdir / "exp.ini")]) == 1


def test_threads_env_override(monkeypatch):
    from sptk.xprunner.experiments import resolve_threads
    monkeypatch.setenv("SPTK_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2  # explicit flag wins
    monkeypatch.delenv("SPTK_THREADS")
    assert resolve_threads(None) >= 1
