"""Experiment configuration files: flat key-value text with sections.

INI dialect via configparser; no code execution. Sections: [experiment],
[model], [pretrain], [finetune], [synth]. Unknown keys are rejected so typos
fail loudly.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from sptk.encoder.model import EncoderConfig
from sptk.errors import ConfigError, InputError
from sptk.finetune.loop import FinetuneConfig
from sptk.pretrain import PretrainRunConfig
from sptk.xprunner.synth import SyntheticDatasetSpec

EXPERIMENT_KINDS = (
    "self_pretrain", "wikisub", "tapt", "rand_init", "cross_matrix",
    "split_ab", "size_sweep",
)

_EXPERIMENT_KEYS = {
    "kind", "dataset", "datasets", "reference_corpus", "base_checkpoint",
    "base_tokenizer", "seeds", "strategy", "out", "tapt_epochs",
    "layer_counts", "hidden_sizes",
}
_MODEL_KEYS = set(EncoderConfig.__dataclass_fields__)
_PRETRAIN_KEYS = {
    "objective", "steps", "warmup_steps", "batch_size", "seq_len", "peak_lr",
    "mask_rate", "disc_loss_weight", "grad_clip", "debug_rtd_checks",
}
_FINETUNE_KEYS = {
    "epochs", "batch_size", "learning_rate", "max_seq_len", "patience",
    "validation_metric", "warmup_fraction", "grad_clip", "dropout",
}
_SYNTH_KEYS = {
    "vocabulary_size", "examples", "classes", "pattern_family", "noise_rate",
    "seed", "topic_fraction",
}


@dataclass
class ExperimentConfig:
    kind: str
    datasets: list
    out: str
    seeds: list = field(default_factory=lambda: [0])
    strategy: str = "standard"
    reference_corpus: str | None = None
    base_checkpoint: str | None = None
    base_tokenizer: str | None = None
    tapt_epochs: int = 100
    layer_counts: list = field(default_factory=list)
    hidden_sizes: list = field(default_factory=list)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainRunConfig = None
    finetune: FinetuneConfig = None
    synth: SyntheticDatasetSpec | None = None

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.pretrain is None:
            self.pretrain = PretrainRunConfig(
                steps=2000, warmup_steps=120, batch_size=8, seq_len=128
            )
        if self.finetune is None:
            self.finetune = FinetuneConfig(learning_rate=1e-4, max_seq_len=128)

    def validate_files(self) -> None:
        for d in self.datasets:
            if not (Path(d) / "meta.json").exists():
                raise InputError(f"dataset not found: {d}")
        if self.reference_corpus and not Path(self.reference_corpus).exists():
            raise InputError(f"reference corpus not found: {self.reference_corpus}")
        if self.base_checkpoint and not Path(self.base_checkpoint).exists():
            raise InputError(f"base checkpoint not found: {self.base_checkpoint}")

    def config_hash(self) -> str:
        blob = repr((
            self.kind, tuple(self.datasets), tuple(self.seeds), self.strategy,
            self.reference_corpus, self.base_checkpoint, self.base_tokenizer,
            self.tapt_epochs,
            tuple(self.layer_counts), tuple(self.hidden_sizes),
            tuple(sorted(self.model.to_dict().items())),
            tuple(sorted(self.pretrain.to_dict().items())),
            tuple(sorted(self.finetune.to_dict().items())),
        ))
        return hashlib.sha256(blob.encode()).hexdigest()


def _reject_unknown(section, keys, allowed):
    unknown = set(keys) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")


def _get_typed(parser, section, caster):
    out = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key in caster:
            out[key] = caster[key](raw)
    return out


def _parse_floats(raw: str) -> object:
    vals = [float(p) for p in raw.replace(",", " ").split()]
    return vals[0] if len(vals) == 1 else tuple(vals)


def _parse_ints(raw: str) -> list:
    return [int(p) for p in raw.replace(",", " ").split()]


def load_experiment_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read(path)
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    exp = dict(parser.items("experiment"))
    _reject_unknown("experiment", exp, _EXPERIMENT_KEYS)
    for section, allowed in (("model", _MODEL_KEYS), ("pretrain", _PRETRAIN_KEYS),
                             ("finetune", _FINETUNE_KEYS), ("synth", _SYNTH_KEYS)):
        if parser.has_section(section):
            _reject_unknown(section, dict(parser.items(section)), allowed)

    datasets = []
    if "dataset" in exp:
        datasets.append(exp["dataset"])
    if "datasets" in exp:
        datasets.extend(exp["datasets"].split())
    kind = exp.get("kind")
    if kind is None:
        raise ConfigError(f"{path}: [experiment] needs a kind")

    model_kw = _get_typed(parser, "model", {
        "layers": int, "hidden": int, "heads": int, "ffn_dim": int,
        "vocab_size": int, "max_positions": int, "dropout": float,
        "generator_hidden_fraction": float,
    })
    pretrain_kw = _get_typed(parser, "pretrain", {
        "objective": str, "steps": int, "warmup_steps": int, "batch_size": int,
        "seq_len": int, "peak_lr": float, "mask_rate": float,
        "disc_loss_weight": float, "grad_clip": float,
        "debug_rtd_checks": lambda s: s.lower() in ("1", "true", "yes"),
    })
    finetune_kw = _get_typed(parser, "finetune", {
        "epochs": int, "batch_size": int, "learning_rate": _parse_floats,
        "max_seq_len": int, "patience": int, "validation_metric": str,
        "warmup_fraction": float, "grad_clip": float, "dropout": float,
    })
    synth_kw = _get_typed(parser, "synth", {
        "vocabulary_size": int, "examples": int, "classes": int,
        "pattern_family": str, "noise_rate": float, "seed": int,
        "topic_fraction": float,
    })

    overrides = overrides or {}
    seeds = _parse_ints(exp.get("seeds", "0"))
    if overrides.get("seed") is not None:
        seeds = [int(overrides["seed"])]
    out = overrides.get("out") or exp.get("out")
    if not out:
        raise ConfigError(f"{path}: no output directory (set out= or pass --out)")

    base_pretrain = {"steps": 2000, "warmup_steps": 120, "batch_size": 8,
                     "seq_len": 128}
    base_pretrain.update(pretrain_kw)
    base_finetune = {"learning_rate": 1e-4, "max_seq_len": 128}
    base_finetune.update(finetune_kw)
    return ExperimentConfig(
        kind=kind,
        datasets=datasets,
        out=out,
        seeds=seeds,
        strategy=exp.get("strategy", "standard"),
        reference_corpus=exp.get("reference_corpus"),
        base_checkpoint=exp.get("base_checkpoint"),
        base_tokenizer=exp.get("base_tokenizer"),
        tapt_epochs=int(exp.get("tapt_epochs", "100")),
        layer_counts=_parse_ints(exp.get("layer_counts", "")),
        hidden_sizes=_parse_ints(exp.get("hidden_sizes", "")),
        model=EncoderConfig(**model_kw),
        pretrain=PretrainRunConfig(**base_pretrain),
        finetune=FinetuneConfig(**base_finetune),
        synth=SyntheticDatasetSpec(**synth_kw) if synth_kw else None,
    )
