"""Self-supervised pretraining: masking plans, MLM and replaced-token-detection
steps, the main pretraining loop, and task-adaptive continuation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import subprocess
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from sptk import numcore as nc
from sptk import subword
from sptk.corpus import PackedBatch, PretrainCorpus, pack_sequences
from sptk.encoder.checkpoint import EncoderCheckpoint, checkpoint_from_params
from sptk.encoder.model import (
    ElectraModel,
    EncoderConfig,
    MlmModel,
    init_electra_model,
    init_mlm_model,
)
from sptk.errors import ConfigError, ContractError, InputError, NanLossError
from sptk.numcore import LRSchedule, Tensor, backward, clip_global_norm, lr_at_step
from sptk.subword import CLS, MASK, PAD, SEP, TokenizerModel

MASK_ACTION, RANDOM_ACTION, KEEP_ACTION = 0, 1, 2
TRACE_EVERY = 50


@dataclass
class PretrainRunConfig:
    """Pretraining hyperparameters; full-scale defaults, desk-scale overrides."""

    objective: str = "electra"
    steps: int = 1_000_000
    warmup_steps: int = 10_000
    batch_size: int = 128
    seq_len: int = 128
    peak_lr: float = 5e-4
    mask_rate: float = 0.15
    disc_loss_weight: float = 50.0
    seed: int = 0
    grad_clip: float = 1.0
    debug_rtd_checks: bool = False

    def __post_init__(self):
        if self.objective not in ("mlm", "electra"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if not 0 < self.mask_rate <= 0.5:
            raise ConfigError("mask_rate must lie in (0, 0.5]")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")

    @classmethod
    def mlm_defaults(cls, **kw) -> "PretrainRunConfig":
        base = dict(objective="mlm", steps=100_000, warmup_steps=6_000,
                    batch_size=512, seq_len=512)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MaskingPlan:
    """Selected positions with their 80/10/10 actions and original ids."""

    rows: np.ndarray          # (K,) row index of each selection
    cols: np.ndarray          # (K,) column index
    actions: np.ndarray       # (K,) MASK_ACTION/RANDOM_ACTION/KEEP_ACTION
    originals: np.ndarray     # (K,) original token ids
    random_ids: np.ndarray    # (K,) replacement draw for RANDOM_ACTION slots
    n_rows: int
    seq_len: int
    empty_rows: np.ndarray    # rows that had no eligible position (flagged)

    @property
    def n_selected(self) -> int:
        return int(self.rows.size)

    def flat_positions(self) -> np.ndarray:
        return self.rows * self.seq_len + self.cols


def eligible_mask(tokens: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Real positions that are not CLS/SEP/PAD."""
    return (mask == 1) & (tokens != CLS) & (tokens != SEP) & (tokens != PAD)


def sample_masking(tokens, mask=None, rate: float = 0.15, seed: int = 0,
                   vocab_size: int = 0) -> MaskingPlan:
    """Uniform selection of round(rate * eligible) positions per row with the
    80/10/10 mask/random/keep action split; deterministic per (batch, seed).

    `tokens` may be a PackedBatch (its mask is used when `mask` is None).
    """
    if isinstance(tokens, PackedBatch):
        if mask is None:
            mask = tokens.mask
        tokens = tokens.tokens
    if not 0 < rate <= 0.5:
        raise ContractError("mask rate must lie in (0, 0.5]")
    if vocab_size < subword.N_SPECIAL + 1:
        raise ContractError("sample_masking needs the model vocab size")
    rng = np.random.default_rng(seed)
    elig = eligible_mask(tokens, mask)
    rows_out, cols_out = [], []
    empty = []
    for r in range(tokens.shape[0]):
        cand = np.flatnonzero(elig[r])
        k = int(round(rate * cand.size))
        if cand.size == 0 or k == 0:
            empty.append(r)
            continue
        picked = rng.choice(cand, size=k, replace=False)
        picked.sort()
        rows_out.append(np.full(k, r, dtype=np.int64))
        cols_out.append(picked.astype(np.int64))
    if rows_out:
        rows = np.concatenate(rows_out)
        cols = np.concatenate(cols_out)
    else:
        rows = np.zeros(0, dtype=np.int64)
        cols = np.zeros(0, dtype=np.int64)
    u = rng.random(rows.size)
    actions = np.where(u < 0.8, MASK_ACTION,
                       np.where(u < 0.9, RANDOM_ACTION, KEEP_ACTION)).astype(np.int8)
    random_ids = rng.integers(subword.N_SPECIAL, vocab_size, size=rows.size,
                              dtype=np.int64)
    return MaskingPlan(
        rows=rows,
        cols=cols,
        actions=actions,
        originals=tokens[rows, cols].astype(np.int64),
        random_ids=random_ids,
        n_rows=tokens.shape[0],
        seq_len=tokens.shape[1],
        empty_rows=np.asarray(empty, dtype=np.int64),
    )


def corrupt_for_generator(tokens: np.ndarray, plan: MaskingPlan) -> np.ndarray:
    """Apply the plan: MASK slots get [MASK], RANDOM slots a random id,
    KEEP slots stay unchanged."""
    out = tokens.copy()
    is_mask = plan.actions == MASK_ACTION
    is_rand = plan.actions == RANDOM_ACTION
    out[plan.rows[is_mask], plan.cols[is_mask]] = MASK
    out[plan.rows[is_rand], plan.cols[is_rand]] = plan.random_ids[is_rand]
    return out


def mlm_step(model: MlmModel, tokens: np.ndarray, mask: np.ndarray,
             plan: MaskingPlan, dropout_rng=None) -> Tensor:
    """Cross-entropy on the selected positions only of the corrupted input."""
    if plan.n_selected == 0:
        return Tensor(np.zeros((), dtype=nc.get_default_dtype()))
    corrupted = corrupt_for_generator(tokens, plan)
    logits = model.forward_mlm(corrupted, mask, plan.flat_positions(),
                               dropout_rng=dropout_rng)
    return nc.cross_entropy(logits, plan.originals)


def sample_replacements(gen_logits: np.ndarray, plan: MaskingPlan,
                        rng: np.random.Generator) -> np.ndarray:
    """Temperature-1 categorical samples for MASK/RANDOM slots; KEEP slots
    return the original token."""
    sampled = plan.originals.copy()
    replace = plan.actions != KEEP_ACTION
    if not replace.any():
        return sampled
    logits = gen_logits[replace].astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((logits.shape[0], 1))
    draws = (cdf < u).sum(axis=1)
    sampled[replace] = draws
    return sampled


@dataclass
class ElectraStepResult:
    mlm_loss: Tensor
    disc_loss: Tensor
    total: Tensor
    corrupted: np.ndarray
    labels: np.ndarray


def electra_step(model: ElectraModel, tokens: np.ndarray, mask: np.ndarray,
                 plan: MaskingPlan, sample_rng: np.random.Generator,
                 disc_loss_weight: float = 50.0, dropout_rng=None,
                 debug_checks: bool = False) -> ElectraStepResult:
    """Generator MLM loss + discriminator replaced-token loss.

    The generator samples replacements for MASK/RANDOM slots; the corrupted
    sequence enters the discriminator as plain ids, so no gradient flows back
    through the sampling. A sampled token equal to the original is labeled
    "original".
    """
    dtype = nc.get_default_dtype()
    if plan.n_selected == 0:
        zero = Tensor(np.zeros((), dtype=dtype))
        labels = np.zeros_like(tokens, dtype=np.int8)
        return ElectraStepResult(zero, zero, zero, tokens.copy(), labels)
    gen_input = corrupt_for_generator(tokens, plan)
    gen_logits = model.generator.forward_mlm(gen_input, mask, plan.flat_positions(),
                                             dropout_rng=dropout_rng)
    mlm_loss = nc.cross_entropy(gen_logits, plan.originals)

    sampled = sample_replacements(gen_logits.data, plan, sample_rng)
    corrupted = tokens.copy()
    corrupted[plan.rows, plan.cols] = sampled
    labels = (corrupted != tokens).astype(np.int8)

    if debug_checks:
        _debug_rtd_invariants(tokens, corrupted, labels, plan, mask)

    disc_logits = model.rtd_logits(corrupted, mask, dropout_rng=dropout_rng)
    disc_loss = nc.binary_cross_entropy(
        disc_logits, labels.astype(dtype), weights=(mask == 1).astype(dtype)
    )
    total = nc.add(mlm_loss, nc.scale(disc_loss, disc_loss_weight))
    return ElectraStepResult(mlm_loss, disc_loss, total, corrupted, labels)


def _debug_rtd_invariants(tokens, corrupted, labels, plan: MaskingPlan, mask):
    diff = corrupted != tokens
    if not np.array_equal(labels.astype(bool), diff):
        raise ContractError("RTD labels disagree with the (corrupted != original) predicate")
    allowed = np.zeros_like(diff)
    allowed[plan.rows, plan.cols] = True
    if (diff & ~allowed).any():
        raise ContractError("corruption outside the selected positions")
    n_real = int((mask == 1).sum())
    if n_real and labels.sum() / n_real > plan.n_selected / max(n_real, 1) + 1e-9:
        raise ContractError("replaced fraction exceeds the selection rate")


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _batch_fingerprint(tokens: np.ndarray) -> str:
    return hashlib.sha256(tokens.tobytes()).hexdigest()[:16]


def _derived_seed(run_seed: int, tag: int, k: int) -> int:
    return int(np.random.SeedSequence((run_seed, tag, k)).generate_state(1)[0])


def _step_seed(run_seed: int, step: int) -> int:
    return _derived_seed(run_seed, 1, step)


class _BatchSampler:
    """Seeded epoch-reshuffled row batches over packed sequences."""

    def __init__(self, packed: PackedBatch, batch_size: int, seed: int):
        self.packed = packed
        self.batch_size = min(batch_size, packed.n_rows)
        self.seed = seed
        self._epoch = 0
        self._order = None
        self._pos = 0

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        if self._order is None or self._pos + self.batch_size > self.packed.n_rows:
            rng = np.random.default_rng(_derived_seed(self.seed, 2, self._epoch))
            self._order = rng.permutation(self.packed.n_rows)
            self._pos = 0
            self._epoch += 1
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.packed.tokens[idx], self.packed.mask[idx]


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)

    def record(self, step, mlm_loss, disc_loss, total, lr):
        self.rows.append((step, float(mlm_loss), float(disc_loss), float(total),
                          float(lr)))

    def save(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "mlm_loss", "disc_loss", "total", "lr"])
            for row in self.rows:
                w.writerow([row[0]] + [f"{v:.6f}" for v in row[1:]])

    def totals(self) -> list[float]:
        return [r[3] for r in self.rows]


def _objective_losses(objective, model, tokens, mask, plan, sample_rng,
                      disc_loss_weight, dropout_rng, debug_checks):
    if objective == "mlm":
        loss = mlm_step(model, tokens, mask, plan, dropout_rng=dropout_rng)
        return loss, loss, Tensor(np.zeros((), dtype=nc.get_default_dtype())), None
    res = electra_step(model, tokens, mask, plan, sample_rng,
                       disc_loss_weight=disc_loss_weight,
                       dropout_rng=dropout_rng, debug_checks=debug_checks)
    return res.total, res.mlm_loss, res.disc_loss, res


def pretrain_loop(
    model_config: EncoderConfig,
    run_config: PretrainRunConfig,
    corpus: PretrainCorpus,
    tokenizer: TokenizerModel,
    out_dir=None,
    init_model=None,
    schedule: LRSchedule | None = None,
    rtd_violation_counter: list | None = None,
) -> EncoderCheckpoint:
    """Run `steps` optimizer updates; returns the encoder checkpoint (for the
    ELECTRA objective the discriminator is kept and the generator stored as an
    extra section so TAPT can resume it).
    """
    packed = pack_sequences(corpus, tokenizer, run_config.seq_len)
    if packed.n_rows == 0:
        raise InputError("packed corpus is empty")
    if run_config.objective == "electra":
        model = init_model or init_electra_model(model_config, run_config.seed)
        params = model.parameters()
    else:
        model = init_model or init_mlm_model(model_config, run_config.seed)
        params = model.parameters()
    param_list = [params[k] for k in sorted(params)]
    opt_state = nc.init_optimizer_state(param_list)
    if schedule is None and run_config.steps > 1:
        warmup = min(max(1, run_config.warmup_steps), run_config.steps - 1)
        schedule = LRSchedule(run_config.peak_lr, warmup, run_config.steps)
    sampler = _BatchSampler(packed, run_config.batch_size, run_config.seed)
    trace = LossTrace()

    def eval_losses(step, tokens, mask, update):
        plan = sample_masking(tokens, mask, run_config.mask_rate,
                              _step_seed(run_config.seed, step),
                              model_config.vocab_size)
        sample_rng = np.random.default_rng(_step_seed(run_config.seed, step) + 1)
        dropout_rng = (
            np.random.default_rng(_step_seed(run_config.seed, step) + 2)
            if model_config.dropout > 0 and update else None
        )
        total, mlm_l, disc_l, res = _objective_losses(
            run_config.objective, model, tokens, mask, plan, sample_rng,
            run_config.disc_loss_weight, dropout_rng,
            run_config.debug_rtd_checks,
        )
        if rtd_violation_counter is not None and res is not None:
            try:
                _debug_rtd_invariants(tokens, res.corrupted, res.labels, plan, mask)
            except ContractError:
                rtd_violation_counter.append(step)
        return total, mlm_l, disc_l

    tokens, mask = sampler.next_batch()
    total, mlm_l, disc_l = eval_losses(0, tokens, mask, update=False)
    trace.record(0, mlm_l.item(), disc_l.item(), total.item(), 0.0)

    for step in range(1, run_config.steps + 1):
        lr = lr_at_step(schedule, step) if schedule is not None else run_config.peak_lr
        total, mlm_l, disc_l = eval_losses(step, tokens, mask, update=True)
        if not math.isfinite(total.item()):
            raise NanLossError(step, lr, _batch_fingerprint(tokens))
        for p in param_list:
            p.zero_grad()
        backward(total)
        clip_global_norm(param_list, run_config.grad_clip)
        nc.adamw_step(param_list, [p.grad for p in param_list], opt_state, lr)
        if step % TRACE_EVERY == 0:
            trace.record(step, mlm_l.item(), disc_l.item(), total.item(), lr)
        if step < run_config.steps:
            tokens, mask = sampler.next_batch()

    provenance = {
        "objective": run_config.objective,
        "steps": run_config.steps,
        "seed": run_config.seed,
        "corpus_fingerprint": corpus.fingerprint(),
        "tokenizer_hash": tokenizer.model_hash(),
        "run_config": run_config.to_dict(),
    }
    ckpt = checkpoint_from_params(model_config, model.parameters(), provenance)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        trace.save(out_dir / "loss_trace.csv")
        manifest = {
            "run_config": run_config.to_dict(),
            "model_config": model_config.to_dict(),
            "corpus_fingerprint": corpus.fingerprint(),
            "tokenizer_hash": tokenizer.model_hash(),
            "git_describe": _git_describe(),
            "thread_count": int(os.environ.get("SPTK_THREADS", "1")),
        }
        (out_dir / "run_manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )
    ckpt.loss_trace = trace
    return ckpt


def tapt_updates(corpus_rows: int, batch_size: int, epochs: int) -> tuple[int, int]:
    """Total updates = epochs * ceil(rows / batch); warmup = 6% of the total."""
    per_epoch = math.ceil(corpus_rows / batch_size)
    total = epochs * per_epoch
    warmup = int(round(0.06 * total))
    return total, warmup


def tapt_continue(
    checkpoint: EncoderCheckpoint,
    downstream_corpus: PretrainCorpus,
    epochs: int,
    tokenizer: TokenizerModel,
    batch_size: int | None = None,
    seed: int | None = None,
    out_dir=None,
) -> EncoderCheckpoint:
    """Continue the checkpoint's own objective on downstream text.

    Uses epochs-worth of updates with the first 6% as linear warmup.
    """
    objective = checkpoint.provenance.get("objective")
    if objective not in ("mlm", "electra"):
        raise ConfigError("checkpoint does not record a pretraining objective")
    if objective == "electra" and not checkpoint.has_generator:
        raise ConfigError("ELECTRA TAPT requires the stored generator weights")
    if objective == "mlm" and not checkpoint.has_mlm_head:
        raise ConfigError("MLM TAPT requires the stored MLM head weights")
    base_run = checkpoint.provenance.get("run_config", {})
    batch = batch_size or base_run.get("batch_size", 128)
    seq_len = base_run.get("seq_len", 128)
    peak_lr = base_run.get("peak_lr", 5e-4)
    if epochs == 0:
        return EncoderCheckpoint(
            config=checkpoint.config,
            params={k: v.copy() for k, v in checkpoint.params.items()},
            provenance={**checkpoint.provenance, "tapt_epochs": 0},
        )
    packed = pack_sequences(downstream_corpus, tokenizer, seq_len)
    total, warmup = tapt_updates(packed.n_rows, min(batch, packed.n_rows), epochs)
    if total > 1:
        warmup = min(max(1, warmup), total - 1)
    run = PretrainRunConfig(
        objective=objective,
        steps=total,
        warmup_steps=warmup,
        batch_size=batch,
        seq_len=seq_len,
        peak_lr=peak_lr,
        mask_rate=base_run.get("mask_rate", 0.15),
        disc_loss_weight=base_run.get("disc_loss_weight", 50.0),
        seed=checkpoint.provenance.get("seed", 0) if seed is None else seed,
    )
    init = (checkpoint.to_electra_model() if objective == "electra"
            else checkpoint.to_mlm_model())
    schedule = LRSchedule(peak_lr, warmup, total) if total > 1 else None
    out = pretrain_loop(checkpoint.config, run, downstream_corpus, tokenizer,
                        out_dir=out_dir, init_model=init, schedule=schedule)
    out.provenance["tapt_epochs"] = epochs
    out.provenance["tapt_total_updates"] = total
    out.provenance["tapt_warmup"] = warmup
    return out
