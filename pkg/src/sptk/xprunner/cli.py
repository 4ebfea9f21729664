"""Command-line interface.

Subcommands: gen-data, build-corpus, train-tokenizer, pretrain, tapt,
finetune, analyze, matrix, sweep, report. Every subcommand takes --config
plus --seed/--out/--threads overrides. Exit codes: 0 success, 1 input error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from sptk import analysis, subword
from sptk.corpus import build_corpus, load_corpus, load_dataset, save_corpus, write_dataset
from sptk.errors import ConfigError, InputError, LoadError, SpecError, SptkError
from sptk.predictions import load_predictions
from sptk.xprunner.config import load_experiment_config
from sptk.xprunner.experiments import run, verify_provenance
from sptk.xprunner.synth import gen_synthetic_dataset

_INPUT_ERRORS = (InputError, ConfigError, LoadError, SpecError,
                 FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_common(p):
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--seed", type=int, default=None, help="override seeds")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker pool size (or set SPTK_THREADS)")


def build_parser() -> _Parser:
    parser = _Parser(prog="sptk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen-data", "generate a synthetic labeled dataset"),
        ("build-corpus", "build a pretraining corpus from a dataset"),
        ("train-tokenizer", "train a subword tokenizer on a corpus"),
        ("pretrain", "run self_pretrain/wikisub/rand_init pipelines"),
        ("tapt", "continue pretraining on downstream text, then finetune"),
        ("finetune", "finetune from random init (rand_init pipeline)"),
        ("analyze", "error inconsistency + calibrated ensemble of two runs"),
        ("matrix", "cross_matrix or split_ab experiment"),
        ("sweep", "layer/hidden size sweep"),
        ("report", "render summary CSV/JSON from a results directory"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "analyze":
            p.add_argument("--pred-a", required=True)
            p.add_argument("--pred-b", required=True)
            p.add_argument("--val-a")
            p.add_argument("--val-b")
        if name == "report":
            p.add_argument("--check", action="store_true",
                           help="verify provenance hashes")
    return parser


def _cmd_gen_data(args) -> int:
    config = load_experiment_config(args.config,
                                    {"seed": args.seed, "out": args.out})
    if config.synth is None:
        raise ConfigError("gen-data needs a [synth] section")
    spec = config.synth
    if args.seed is not None:
        from dataclasses import replace
        spec = replace(spec, seed=args.seed)
    dataset = gen_synthetic_dataset(spec)
    write_dataset(dataset, config.out)
    print(f"wrote dataset {dataset.name} to {config.out} "
          f"(train={len(dataset.train)}, validation={len(dataset.validation)}, "
          f"test={len(dataset.test)})")
    return 0


def _cmd_build_corpus(args) -> int:
    config = load_experiment_config(args.config,
                                    {"seed": args.seed, "out": args.out})
    if not config.datasets:
        raise ConfigError("build-corpus needs a dataset")
    dataset = load_dataset(config.datasets[0])
    corpus = build_corpus(dataset, config.strategy, config.seeds[0])
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    print(f"wrote {config.strategy} corpus ({len(corpus.sentences())} sentences) "
          f"to {out}")
    return 0


def _cmd_train_tokenizer(args) -> int:
    config = load_experiment_config(args.config,
                                    {"seed": args.seed, "out": args.out})
    if not config.reference_corpus and not config.datasets:
        raise ConfigError("train-tokenizer needs a dataset or reference_corpus")
    if config.reference_corpus:
        corpus = load_corpus(config.reference_corpus)
    else:
        dataset = load_dataset(config.datasets[0])
        corpus = build_corpus(dataset, config.strategy, config.seeds[0])
    tok = subword.train_vocab(corpus.sentences(), config.model.vocab_size)
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    subword.save(tok, out)
    print(f"wrote tokenizer (vocab {tok.vocab_size}) to {out}")
    return 0


def _run_kind(args, allowed_kinds) -> int:
    config = load_experiment_config(args.config,
                                    {"seed": args.seed, "out": args.out})
    if config.kind not in allowed_kinds:
        raise ConfigError(
            f"this subcommand runs {allowed_kinds}, config says {config.kind!r}"
        )
    out = run(config, threads=args.threads)
    print(f"experiment {config.kind} complete: {out}")
    summary = out / "reports" / "summary.csv"
    if summary.exists():
        print(summary.read_text().rstrip())
    return 0


def _cmd_analyze(args) -> int:
    a = load_predictions(args.pred_a)
    b = load_predictions(args.pred_b)
    inconsistency = analysis.error_inconsistency(a, b)
    out = {"error_inconsistency": inconsistency}
    if args.val_a and args.val_b:
        va = load_predictions(args.val_a)
        vb = load_predictions(args.val_b)
        mix, ta, tb = analysis.calibrated_ensemble(a, b, va, vb)
        correct = (mix.argmax() == mix.labels).mean()
        out.update({
            "temperature_a": ta.temperature,
            "temperature_b": tb.temperature,
            "ensemble_accuracy": float(correct),
            "accuracy_a": float((a.argmax() == a.labels).mean()),
            "accuracy_b": float((b.argmax() == b.labels).mean()),
        })
    dest = Path(args.out) if args.out else None
    text = json.dumps(out, indent=2, sort_keys=True)
    if dest:
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_text(text + "\n")
    print(text)
    return 0


def _cmd_report(args) -> int:
    config = load_experiment_config(args.config,
                                    {"seed": args.seed, "out": args.out})
    results = Path(config.out)
    manifest_path = results / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"no manifest at {manifest_path}")
    if args.check:
        info = verify_provenance(results)
        print(f"provenance ok: {info['stages']} stages, {info['files']} files")
    reports_dir = results / "reports"
    for f in sorted(reports_dir.glob("*.csv")):
        print(f"== {f.name}")
        print(f.read_text().rstrip())
    return 0


_DISPATCH = {
    "gen-data": _cmd_gen_data,
    "build-corpus": _cmd_build_corpus,
    "train-tokenizer": _cmd_train_tokenizer,
    "pretrain": lambda a: _run_kind(a, ("self_pretrain", "wikisub", "rand_init")),
    "tapt": lambda a: _run_kind(a, ("tapt",)),
    "finetune": lambda a: _run_kind(a, ("rand_init",)),
    "analyze": _cmd_analyze,
    "matrix": lambda a: _run_kind(a, ("cross_matrix", "split_ab")),
    "sweep": lambda a: _run_kind(a, ("size_sweep",)),
    "report": _cmd_report,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SptkError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())
