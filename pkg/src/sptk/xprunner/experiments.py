"""Experiment pipelines over corpora, pretraining, finetuning, and analysis.

Each experiment writes a results directory (manifest.json, corpora/,
tokenizers/, checkpoints/, traces/, predictions/, reports/). Stages record
input/output hashes in the manifest; completed experiments are no-ops on
rerun, and a failed run resumes from the last completed stage.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from sptk import subword
from sptk.analysis import benefit_matrix
from sptk.corpus import (
    build_corpus,
    load_corpus,
    load_dataset,
    save_corpus,
    size_matched_sample,
    split_halves,
)
from sptk.encoder.checkpoint import load_checkpoint, save_checkpoint
from sptk.encoder.model import EncoderConfig
from sptk.errors import ConfigError, InputError, SptkError
from sptk.finetune.loop import finetune
from sptk.finetune.metrics import benefit_percent
from sptk.predictions import PredictionSet, save_predictions
from sptk.pretrain import pretrain_loop, tapt_continue
from sptk.xprunner.config import ExperimentConfig

# Pinned desk-scale profile used by the acceptance runs. The pretraining
# peak LR / discriminator weight were calibrated by pilot runs per objective
# (full-scale defaults destabilize 2000-step micro models).
MICRO_PROFILE = {
    "model": dict(layers=2, hidden=64, heads=4, ffn_dim=256, vocab_size=2000,
                  max_positions=128, dropout=0.1, generator_hidden_fraction=0.5),
    "pretrain": dict(objective="electra", steps=2000, warmup_steps=120,
                     batch_size=8, seq_len=128, peak_lr=2e-4, mask_rate=0.15,
                     disc_loss_weight=1.0),
    "pretrain_mlm": dict(objective="mlm", steps=2000, warmup_steps=120,
                         batch_size=8, seq_len=128, peak_lr=2e-4,
                         mask_rate=0.15),
    "finetune": dict(epochs=20, batch_size=32, learning_rate=3e-4,
                     max_seq_len=128, patience=3, dropout=0.0),
    "synth": dict(vocabulary_size=1200, examples=500, classes=4,
                  noise_rate=0.02, topic_fraction=0.45),
}

SUBDIRS = ("corpora", "tokenizers", "checkpoints", "traces", "predictions",
           "reports")


def resolve_threads(threads=None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("SPTK_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class _Runner:
    """Stage bookkeeping: manifest, skip-if-done, output hashing."""

    def __init__(self, out_dir, config: ExperimentConfig, threads: int):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        for sub in SUBDIRS:
            (self.dir / sub).mkdir(exist_ok=True)
        self.config_hash = config.config_hash()
        self.threads = threads
        mpath = self.dir / "manifest.json"
        if mpath.exists():
            manifest = json.loads(mpath.read_text())
            if manifest.get("config_hash") != self.config_hash:
                raise InputError(
                    f"{self.dir} holds results for a different config; "
                    "choose a fresh output directory"
                )
            self.manifest = manifest
        else:
            self.manifest = {
                "config_hash": self.config_hash,
                "kind": config.kind,
                "thread_count": threads,
                "status": "partial",
                "inputs": {},
                "stage_order": [],
                "stages": {},
            }

    @property
    def complete(self) -> bool:
        return self.manifest.get("status") == "complete"

    def record_input(self, label: str, digest: str) -> None:
        self.manifest["inputs"][label] = digest

    def _flush(self) -> None:
        _atomic_write_text(self.dir / "manifest.json",
                           json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")

    def stage(self, name: str, inputs: dict, outputs: list, fn_run, fn_load):
        """Run fn_run (which must write every path in outputs) unless the
        stage is already done, in which case fn_load rebuilds its artifacts."""
        meta = self.manifest["stages"].get(name)
        if meta and meta.get("status") == "done":
            return fn_load()
        try:
            result = fn_run()
        except Exception:
            self.manifest["failure_stage"] = name
            self._flush()
            raise
        out_hashes = {}
        for rel in outputs:
            path = self.dir / rel
            if not path.exists():
                raise SptkError(f"stage {name} did not produce {rel}")
            out_hashes[rel] = _sha256_file(path)
        self.manifest["stages"][name] = {
            "status": "done", "inputs": dict(inputs), "outputs": out_hashes,
        }
        if name not in self.manifest["stage_order"]:
            self.manifest["stage_order"].append(name)
        self.manifest.pop("failure_stage", None)
        self._flush()
        return result

    def output_hash(self, stage: str, rel: str) -> str:
        return self.manifest["stages"][stage]["outputs"][rel]

    def finish(self) -> None:
        self.manifest["status"] = "complete"
        self._flush()


# ---------------------------------------------------------------------------
# stage helpers
# ---------------------------------------------------------------------------


def _corpus_stage(runner, tag, dataset, strategy, seed, inputs):
    rel = f"corpora/{tag}.txt"

    def run():
        corpus = build_corpus(dataset, strategy, seed)
        save_corpus(corpus, runner.dir / rel)
        return corpus

    return rel, runner.stage(f"corpus:{tag}", inputs, [rel], run,
                             lambda: load_corpus(runner.dir / rel))


def _corpus_file_stage(runner, tag, make_corpus, inputs):
    rel = f"corpora/{tag}.txt"

    def run():
        corpus = make_corpus()
        save_corpus(corpus, runner.dir / rel)
        return corpus

    return rel, runner.stage(f"corpus:{tag}", inputs, [rel], run,
                             lambda: load_corpus(runner.dir / rel))


def _tokenizer_stage(runner, tag, corpus, vocab_size, inputs):
    rel = f"tokenizers/{tag}.model"

    def run():
        tok = subword.train_vocab(corpus.sentences(), vocab_size)
        subword.save(tok, runner.dir / rel)
        return tok

    return rel, runner.stage(f"tokenizer:{tag}", inputs, [rel], run,
                             lambda: subword.load(runner.dir / rel))


def _model_config(base: EncoderConfig, tokenizer) -> EncoderConfig:
    return EncoderConfig.from_dict({**base.to_dict(),
                                    "vocab_size": tokenizer.vocab_size})


def _pretrain_stage(runner, tag, model_cfg, run_cfg, corpus, tokenizer, inputs):
    ckpt_rel = f"checkpoints/{tag}.ckpt"
    trace_rel = f"traces/{tag}.csv"

    def run():
        ckpt = pretrain_loop(model_cfg, run_cfg, corpus, tokenizer)
        save_checkpoint(ckpt, runner.dir / ckpt_rel)
        ckpt.loss_trace.save(runner.dir / trace_rel)
        return ckpt

    return ckpt_rel, runner.stage(
        f"pretrain:{tag}", inputs, [ckpt_rel, trace_rel], run,
        lambda: load_checkpoint(runner.dir / ckpt_rel),
    )


def _tapt_stage(runner, tag, base_ckpt, corpus, epochs, tokenizer, inputs):
    ckpt_rel = f"checkpoints/{tag}.ckpt"

    def run():
        ckpt = tapt_continue(base_ckpt, corpus, epochs, tokenizer)
        save_checkpoint(ckpt, runner.dir / ckpt_rel)
        return ckpt

    return ckpt_rel, runner.stage(
        f"tapt:{tag}", inputs, [ckpt_rel], run,
        lambda: load_checkpoint(runner.dir / ckpt_rel),
    )


def _finetune_task(payload):
    """Worker-safe finetune returning only picklable artifacts."""
    (tag, init, dataset, ft_config, seed, tokenizer) = payload
    result = finetune(init, dataset, ft_config, seed, tokenizer)
    return tag, result.report, result.test_predictions, result.validation_predictions


def _write_finetune_outputs(runner, tag, report, test_preds, val_preds):
    report_rel = f"reports/{tag}.json"
    _atomic_write_text(runner.dir / report_rel,
                       json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    outputs = [report_rel]
    for split, preds in (("test", test_preds), ("val", val_preds)):
        rel = f"predictions/{tag}.{split}.jsonl"
        path = runner.dir / rel
        if isinstance(preds, PredictionSet):
            save_predictions(preds, path)
        else:
            _atomic_write_text(path, "".join(json.dumps(r) + "\n" for r in preds))
        outputs.append(rel)
    return outputs


def _finetune_stage(runner, tag, init, dataset, ft_config, seed, tokenizer,
                    inputs):
    report_rel = f"reports/{tag}.json"

    def run():
        _, report, test_preds, val_preds = _finetune_task(
            (tag, init, dataset, ft_config, seed, tokenizer))
        _write_finetune_outputs(runner, tag, report, test_preds, val_preds)
        return report.to_dict()

    outputs = [report_rel,
               f"predictions/{tag}.test.jsonl", f"predictions/{tag}.val.jsonl"]
    return runner.stage(
        f"finetune:{tag}", inputs, outputs, run,
        lambda: json.loads((runner.dir / report_rel).read_text()),
    )


def _finetune_stage_batch(runner, tasks, threads):
    """Run many independent finetunes, across a worker pool when threads > 1.

    tasks: list of (tag, init, dataset, ft_config, seed, tokenizer, inputs).
    Returns {tag: report_dict}.
    """
    pending = []
    reports = {}
    for task in tasks:
        tag, inputs = task[0], task[6]
        meta = runner.manifest["stages"].get(f"finetune:{tag}")
        if meta and meta.get("status") == "done":
            reports[tag] = json.loads(
                (runner.dir / f"reports/{tag}.json").read_text())
        else:
            pending.append(task)
    if pending:
        payloads = [t[:6] for t in pending]
        if threads > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_finetune_task, payloads))
        else:
            results = [_finetune_task(p) for p in payloads]
        by_tag = {r[0]: r for r in results}
        for task in pending:
            tag, inputs = task[0], task[6]
            _, report, test_preds, val_preds = by_tag[tag]
            outputs = _write_finetune_outputs(runner, tag, report, test_preds,
                                              val_preds)
            runner.stage(f"finetune:{tag}", inputs, outputs,
                         lambda: None, lambda: None)
            reports[tag] = report.to_dict()
    return reports


def _write_summary(runner, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            f"{v:.4f}" if isinstance(v, float) else str(v) for v in row
        ))
    _atomic_write_text(runner.dir / "reports/summary.csv", "\n".join(lines) + "\n")
    payload = [dict(zip(header, row)) for row in rows]
    _atomic_write_text(runner.dir / "reports/summary.json",
                       json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------


def _mean(values):
    return float(np.mean(values)) if values else float("nan")


def _reference_stages(runner, config, vocab_size):
    """Pretrain the reference ("off-the-shelf" stand-in) model on the
    reference corpus; returns (ckpt, tokenizer, ckpt_hash, tok_hash)."""
    if not config.reference_corpus:
        raise ConfigError("this experiment needs a reference_corpus")
    runner.record_input("reference_corpus",
                        _sha256_file(config.reference_corpus))
    ref_corpus = load_corpus(config.reference_corpus)
    ref_hash = runner.manifest["inputs"]["reference_corpus"]
    tok_rel, ref_tok = _tokenizer_stage(
        runner, "reference", ref_corpus, vocab_size,
        {"corpus": ref_hash},
    )
    tok_hash = runner.output_hash("tokenizer:reference", tok_rel)
    model_cfg = _model_config(config.model, ref_tok)
    run_cfg = replace(config.pretrain, seed=config.seeds[0])
    ckpt_rel, ref_ckpt = _pretrain_stage(
        runner, "reference", model_cfg, run_cfg, ref_corpus, ref_tok,
        {"corpus": ref_hash, "tokenizer": tok_hash},
    )
    ckpt_hash = runner.output_hash("pretrain:reference", ckpt_rel)
    return ref_ckpt, ref_tok, ckpt_hash, tok_hash


def _run_pretrain_and_compare(config: ExperimentConfig, runner: _Runner,
                              threads: int, candidate: str):
    """Shared pipeline for self_pretrain / wikisub / tapt / rand_init."""
    dataset = load_dataset(config.datasets[0])
    ds_hash = dataset.fingerprint()
    runner.record_input(f"dataset:{dataset.name}", ds_hash)

    corpus_rel, corpus = _corpus_stage(
        runner, "downstream", dataset, config.strategy, config.seeds[0],
        {"dataset": ds_hash},
    )
    corpus_hash = runner.output_hash("corpus:downstream", corpus_rel)
    tok_rel, tok = _tokenizer_stage(
        runner, "downstream", corpus, config.model.vocab_size,
        {"corpus": corpus_hash},
    )
    tok_hash = runner.output_hash("tokenizer:downstream", tok_rel)
    model_cfg = _model_config(config.model, tok)

    use_reference = config.reference_corpus is not None and candidate != "rand_init"
    ref_ckpt = ref_tok = None
    ref_ckpt_hash = ref_tok_hash = None
    if use_reference:
        ref_ckpt, ref_tok, ref_ckpt_hash, ref_tok_hash = _reference_stages(
            runner, config, config.model.vocab_size)

    rand_vals, cand_vals, ref_vals = [], [], []
    for seed in config.seeds:
        rand_report = _finetune_stage(
            runner, f"randinit-s{seed}", model_cfg, dataset, config.finetune,
            seed, tok, {"dataset": ds_hash, "tokenizer": tok_hash,
                        "init": "random"},
        )
        rand_vals.append(rand_report["value"])

        if candidate == "rand_init":
            continue

        if candidate == "self_pretrain":
            run_cfg = replace(config.pretrain, seed=seed)
            ckpt_rel, ckpt = _pretrain_stage(
                runner, f"self-s{seed}", model_cfg, run_cfg, corpus, tok,
                {"corpus": corpus_hash, "tokenizer": tok_hash},
            )
            cand_tok = tok
            cand_tok_hash = tok_hash
        elif candidate == "wikisub":
            ref_corpus = load_corpus(config.reference_corpus)
            target = corpus.total_bytes()
            sub_rel, sub_corpus = _corpus_file_stage(
                runner, f"wikisub-s{seed}",
                lambda: size_matched_sample(ref_corpus, target, seed),
                {"reference_corpus": runner.manifest["inputs"]["reference_corpus"],
                 "dataset": ds_hash},
            )
            sub_hash = runner.output_hash(f"corpus:wikisub-s{seed}", sub_rel)
            wtok_rel, cand_tok = _tokenizer_stage(
                runner, f"wikisub-s{seed}", sub_corpus, config.model.vocab_size,
                {"corpus": sub_hash},
            )
            cand_tok_hash = runner.output_hash(f"tokenizer:wikisub-s{seed}",
                                               wtok_rel)
            run_cfg = replace(config.pretrain, seed=seed)
            ckpt_rel, ckpt = _pretrain_stage(
                runner, f"wikisub-s{seed}", _model_config(config.model, cand_tok),
                run_cfg, sub_corpus, cand_tok,
                {"corpus": sub_hash, "tokenizer": cand_tok_hash},
            )
        elif candidate == "tapt":
            base_ckpt, base_tok, base_hash, base_tok_hash = _base_for_tapt(
                runner, config)
            down_rel, down_corpus = _corpus_stage(
                runner, f"tapt-text-s{seed}", dataset, config.strategy, seed,
                {"dataset": ds_hash},
            )
            down_hash = runner.output_hash(f"corpus:tapt-text-s{seed}", down_rel)
            ckpt_rel, ckpt = _tapt_stage(
                runner, f"tapt-s{seed}", base_ckpt, down_corpus,
                config.tapt_epochs, base_tok,
                {"base": base_hash, "corpus": down_hash},
            )
            cand_tok = base_tok
            cand_tok_hash = base_tok_hash
        else:
            raise ConfigError(f"unknown candidate {candidate!r}")

        ckpt_hash = _stage_or_input_hash(runner, ckpt_rel)
        cand_report = _finetune_stage(
            runner, f"{candidate}-s{seed}-ft", ckpt, dataset, config.finetune,
            seed, cand_tok,
            {"dataset": ds_hash, "tokenizer": cand_tok_hash,
             "checkpoint": ckpt_hash},
        )
        cand_vals.append(cand_report["value"])

        if use_reference:
            ref_report = _finetune_stage(
                runner, f"reference-s{seed}-ft", ref_ckpt, dataset,
                config.finetune, seed, ref_tok,
                {"dataset": ds_hash, "tokenizer": ref_tok_hash,
                 "checkpoint": ref_ckpt_hash},
            )
            ref_vals.append(ref_report["value"])

    if candidate == "rand_init":
        header = ["dataset", "seed", "rand_init"]
        rows = [[dataset.name, seed, rand_vals[i]]
                for i, seed in enumerate(config.seeds)]
        rows.append([dataset.name, "mean", _mean(rand_vals)])
        _write_summary(runner, header, rows)
        return

    # summary in the Table-2 column layout
    header = ["dataset", "seed", "rand_init", candidate, "reference",
              "benefit_pct"]
    rows = []
    for i, seed in enumerate(config.seeds):
        cand = cand_vals[i] if i < len(cand_vals) else ""
        ref = ref_vals[i] if i < len(ref_vals) else ""
        benefit = ""
        if cand != "" and ref != "" and ref != rand_vals[i]:
            benefit = benefit_percent(rand_vals[i], cand, ref)
        rows.append([dataset.name, seed, rand_vals[i], cand, ref, benefit])
    mean_row = [dataset.name, "mean", _mean(rand_vals),
                _mean(cand_vals) if cand_vals else "",
                _mean(ref_vals) if ref_vals else "", ""]
    if cand_vals and ref_vals and _mean(ref_vals) != _mean(rand_vals):
        mean_row[5] = benefit_percent(_mean(rand_vals), _mean(cand_vals),
                                      _mean(ref_vals))
    rows.append(mean_row)
    _write_summary(runner, header, rows)


def _stage_or_input_hash(runner, rel_or_label):
    for stage in runner.manifest["stages"].values():
        if rel_or_label in stage.get("outputs", {}):
            return stage["outputs"][rel_or_label]
    return runner.manifest["inputs"].get(rel_or_label, rel_or_label)


def _base_for_tapt(runner, config):
    """(checkpoint, tokenizer, ckpt_hash, tok_hash) to continue from."""
    if config.base_checkpoint:
        if not config.base_tokenizer:
            raise ConfigError("tapt with base_checkpoint needs base_tokenizer")
        ckpt_hash = _sha256_file(config.base_checkpoint)
        tok_hash = _sha256_file(config.base_tokenizer)
        runner.record_input("base_checkpoint", ckpt_hash)
        runner.record_input("base_tokenizer", tok_hash)
        ckpt = load_checkpoint(config.base_checkpoint)
        tok = subword.load(config.base_tokenizer)
        return ckpt, tok, ckpt_hash, tok_hash
    if not config.reference_corpus:
        raise ConfigError("tapt needs reference_corpus or base_checkpoint")
    return _reference_stages(runner, config, config.model.vocab_size)


def _run_cross_matrix(config: ExperimentConfig, runner: _Runner, threads: int):
    if len(config.datasets) < 2:
        raise ConfigError("cross_matrix needs at least 2 datasets")
    if not config.reference_corpus:
        raise ConfigError("cross_matrix needs a reference_corpus")
    seed = config.seeds[0]
    datasets = [load_dataset(p) for p in config.datasets]
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise InputError("datasets must have distinct names")
    hashes = {}
    for d in datasets:
        hashes[d.name] = d.fingerprint()
        runner.record_input(f"dataset:{d.name}", hashes[d.name])

    ref_ckpt, ref_tok, ref_ckpt_hash, ref_tok_hash = _reference_stages(
        runner, config, config.model.vocab_size)

    # per-dataset corpora, tokenizers, pretrained checkpoints
    toks, ckpts, tok_hashes, ckpt_hashes = {}, {}, {}, {}
    for d in datasets:
        c_rel, corpus = _corpus_stage(runner, d.name, d, config.strategy, seed,
                                      {"dataset": hashes[d.name]})
        c_hash = runner.output_hash(f"corpus:{d.name}", c_rel)
        t_rel, tok = _tokenizer_stage(runner, d.name, corpus,
                                      config.model.vocab_size,
                                      {"corpus": c_hash})
        toks[d.name] = tok
        tok_hashes[d.name] = runner.output_hash(f"tokenizer:{d.name}", t_rel)
        run_cfg = replace(config.pretrain, seed=seed)
        k_rel, ckpt = _pretrain_stage(
            runner, d.name, _model_config(config.model, tok), run_cfg, corpus,
            tok, {"corpus": c_hash, "tokenizer": tok_hashes[d.name]},
        )
        ckpts[d.name] = ckpt
        ckpt_hashes[d.name] = runner.output_hash(f"pretrain:{d.name}", k_rel)

    tasks = []
    for tgt in datasets:
        tasks.append((f"randinit-{tgt.name}",
                      _model_config(config.model, toks[tgt.name]), tgt,
                      config.finetune, seed, toks[tgt.name],
                      {"dataset": hashes[tgt.name], "init": "random",
                       "tokenizer": tok_hashes[tgt.name]}))
        tasks.append((f"reference-{tgt.name}", ref_ckpt, tgt, config.finetune,
                      seed, ref_tok,
                      {"dataset": hashes[tgt.name],
                       "checkpoint": ref_ckpt_hash,
                       "tokenizer": ref_tok_hash}))
        for src in datasets:
            tasks.append((f"cell-{src.name}-to-{tgt.name}", ckpts[src.name],
                          tgt, config.finetune, seed, toks[src.name],
                          {"dataset": hashes[tgt.name],
                           "checkpoint": ckpt_hashes[src.name]}))
    reports = _finetune_stage_batch(runner, tasks, threads)

    grid = {}
    rand_row, ref_row = {}, {}
    for tgt in names:
        rand_row[tgt] = reports[f"randinit-{tgt}"]["value"]
        ref_row[tgt] = reports[f"reference-{tgt}"]["value"]
        for src in names:
            grid[(src, tgt)] = reports[f"cell-{src}-to-{tgt}"]["value"]
    matrix = benefit_matrix(grid, rand_row, ref_row, names, names)
    matrix.to_csv(runner.dir / "reports/benefit_matrix.csv")
    matrix.to_json(runner.dir / "reports/benefit_matrix.json")

    # raw metric grid plus the self-pretraining diagonal
    with open(runner.dir / "reports/raw_metrics.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pretrain\\finetune"] + names + ["rand_init", "reference"])
        for src in names:
            w.writerow([src] + [f"{grid[(src, t)]:.4f}" for t in names]
                       + ["", ""])
        w.writerow(["rand_init"] + [f"{rand_row[t]:.4f}" for t in names]
                   + ["", ""])
        w.writerow(["reference"] + [f"{ref_row[t]:.4f}" for t in names]
                   + ["", ""])
    header = ["dataset", "rand_init", "self_pretrain", "reference",
              "benefit_ratio"]
    rows = [
        [t, rand_row[t], grid[(t, t)], ref_row[t],
         matrix.values[names.index(t), names.index(t)]]
        for t in names
    ]
    _write_summary(runner, header, rows)


def _run_split_ab(config: ExperimentConfig, runner: _Runner, threads: int):
    dataset = load_dataset(config.datasets[0])
    ds_hash = dataset.fingerprint()
    runner.record_input(f"dataset:{dataset.name}", ds_hash)
    seed = config.seeds[0]
    half_a, half_b = split_halves(dataset, seed)
    halves = {"A": half_a, "B": half_b}

    toks, ckpts, tok_hashes, ckpt_hashes = {}, {}, {}, {}
    for label, half in halves.items():
        c_rel, corpus = _corpus_stage(runner, f"half{label}", half,
                                      config.strategy, seed,
                                      {"dataset": ds_hash})
        c_hash = runner.output_hash(f"corpus:half{label}", c_rel)
        t_rel, tok = _tokenizer_stage(runner, f"half{label}", corpus,
                                      config.model.vocab_size,
                                      {"corpus": c_hash})
        toks[label] = tok
        tok_hashes[label] = runner.output_hash(f"tokenizer:half{label}", t_rel)
        run_cfg = replace(config.pretrain, seed=seed)
        k_rel, ckpt = _pretrain_stage(
            runner, f"half{label}", _model_config(config.model, tok), run_cfg,
            corpus, tok, {"corpus": c_hash, "tokenizer": tok_hashes[label]},
        )
        ckpts[label] = ckpt
        ckpt_hashes[label] = runner.output_hash(f"pretrain:half{label}", k_rel)

    tasks = []
    for row in ("A", "B"):
        for col in ("A", "B"):
            tasks.append((f"cell-{row}{col}", ckpts[row], halves[col],
                          config.finetune, seed, toks[row],
                          {"dataset": ds_hash, "checkpoint": ckpt_hashes[row]}))
    reports = _finetune_stage_batch(runner, tasks, threads)

    with open(runner.dir / "reports/split_ab.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pretrain\\finetune", "A", "B"])
        for row in ("A", "B"):
            w.writerow([row] + [f"{reports[f'cell-{row}{col}']['value']:.4f}"
                                for col in ("A", "B")])
    header = ["pretrain_half", "finetune_half", "value"]
    rows = [[row, col, reports[f"cell-{row}{col}"]["value"]]
            for row in ("A", "B") for col in ("A", "B")]
    _write_summary(runner, header, rows)


def run(config: ExperimentConfig, threads=None) -> Path:
    """Execute one experiment end to end; idempotent per config hash."""
    config.validate_files()
    threads = resolve_threads(threads)
    if config.kind == "size_sweep":
        return size_sweep(config, config.layer_counts, config.hidden_sizes,
                          threads)
    runner = _Runner(config.out, config, threads)
    if runner.complete:
        return runner.dir
    if config.kind in ("self_pretrain", "wikisub", "tapt", "rand_init"):
        if not config.datasets:
            raise ConfigError(f"{config.kind} needs a dataset")
        _run_pretrain_and_compare(config, runner, threads, config.kind)
    elif config.kind == "cross_matrix":
        _run_cross_matrix(config, runner, threads)
    elif config.kind == "split_ab":
        _run_split_ab(config, runner, threads)
    runner.finish()
    return runner.dir


def size_sweep(config: ExperimentConfig, layer_counts, hidden_sizes,
               threads=None) -> Path:
    """Rand-init / self-pretrain / reference triples across encoder sizes.

    Emits metric-vs-size curves (one row per swept size per axis)."""
    threads = resolve_threads(threads)
    runner = _Runner(config.out, config, threads)
    if runner.complete:
        return runner.dir
    dataset = load_dataset(config.datasets[0])
    ds_hash = dataset.fingerprint()
    runner.record_input(f"dataset:{dataset.name}", ds_hash)
    seed = config.seeds[0]
    corpus_rel, corpus = _corpus_stage(runner, "downstream", dataset,
                                       config.strategy, seed,
                                       {"dataset": ds_hash})
    corpus_hash = runner.output_hash("corpus:downstream", corpus_rel)
    tok_rel, tok = _tokenizer_stage(runner, "downstream", corpus,
                                    config.model.vocab_size,
                                    {"corpus": corpus_hash})
    tok_hash = runner.output_hash("tokenizer:downstream", tok_rel)
    ref_corpus = ref_hash = None
    if config.reference_corpus:
        runner.record_input("reference_corpus",
                            _sha256_file(config.reference_corpus))
        ref_corpus = load_corpus(config.reference_corpus)
        ref_hash = runner.manifest["inputs"]["reference_corpus"]

    points = [("layers", n) for n in layer_counts] + \
             [("hidden", h) for h in hidden_sizes]
    if not points:
        raise ConfigError("size_sweep needs layer_counts or hidden_sizes")
    rows = []
    for axis, value in points:
        model_kw = config.model.to_dict()
        model_kw[axis if axis == "layers" else "hidden"] = value
        base_cfg = EncoderConfig.from_dict(model_kw)
        tag = f"{axis[0].upper()}{value}"
        model_cfg = _model_config(base_cfg, tok)
        run_cfg = replace(config.pretrain, seed=seed)

        rand_report = _finetune_stage(
            runner, f"{tag}-randinit", model_cfg, dataset, config.finetune,
            seed, tok, {"dataset": ds_hash, "init": "random",
                        "tokenizer": tok_hash},
        )
        sckpt_rel, self_ckpt = _pretrain_stage(
            runner, f"{tag}-self", model_cfg, run_cfg, corpus, tok,
            {"corpus": corpus_hash, "tokenizer": tok_hash},
        )
        self_report = _finetune_stage(
            runner, f"{tag}-self-ft", self_ckpt, dataset, config.finetune,
            seed, tok,
            {"dataset": ds_hash, "tokenizer": tok_hash,
             "checkpoint": runner.output_hash(f"pretrain:{tag}-self", sckpt_rel)},
        )
        ref_val = ""
        if ref_corpus is not None:
            rtok_rel, ref_tok = _tokenizer_stage(
                runner, f"{tag}-reference", ref_corpus, config.model.vocab_size,
                {"corpus": ref_hash},
            )
            rtok_hash = runner.output_hash(f"tokenizer:{tag}-reference", rtok_rel)
            rckpt_rel, ref_ckpt = _pretrain_stage(
                runner, f"{tag}-reference",
                _model_config(base_cfg, ref_tok), run_cfg, ref_corpus, ref_tok,
                {"corpus": ref_hash, "tokenizer": rtok_hash},
            )
            rckpt_hash = runner.output_hash(f"pretrain:{tag}-reference",
                                            rckpt_rel)
            ref_report = _finetune_stage(
                runner, f"{tag}-reference-ft", ref_ckpt, dataset,
                config.finetune, seed, ref_tok,
                {"dataset": ds_hash, "checkpoint": rckpt_hash,
                 "tokenizer": rtok_hash},
            )
            ref_val = ref_report["value"]
        rows.append([axis, value, rand_report["value"], self_report["value"],
                     ref_val])
    header = ["axis", "size", "rand_init", "self_pretrain", "reference"]
    _write_summary(runner, header, rows)
    lines = [",".join(header)] + [
        ",".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row)
        for row in rows
    ]
    _atomic_write_text(runner.dir / "reports/sweep.csv", "\n".join(lines) + "\n")
    runner.finish()
    return runner.dir


def verify_provenance(results_dir) -> dict:
    """Check the manifest DAG: every stage input hash must be an external
    input or a previous stage's output; every output file must match its
    recorded hash. Raises InputError on dangling references."""
    results_dir = Path(results_dir)
    manifest = json.loads((results_dir / "manifest.json").read_text())
    known = set(manifest.get("inputs", {}).values())
    known.add("random")  # random init has no producing artifact
    checked_files = 0
    for name in manifest["stage_order"]:
        stage = manifest["stages"][name]
        for label, digest in stage.get("inputs", {}).items():
            if digest not in known:
                raise InputError(
                    f"stage {name}: input {label}={digest[:12]} has no producer"
                )
        for rel, digest in stage.get("outputs", {}).items():
            path = results_dir / rel
            if not path.exists():
                raise InputError(f"stage {name}: missing output {rel}")
            if _sha256_file(path) != digest:
                raise InputError(f"stage {name}: output {rel} hash mismatch")
            known.add(digest)
            checked_files += 1
    return {"stages": len(manifest["stage_order"]), "files": checked_files,
            "status": manifest.get("status")}
