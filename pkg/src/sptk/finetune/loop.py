"""The finetuning loop: AdamW with 6% warmup, per-epoch validation, early
stopping with patience, best-epoch weight restoration, test-set evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from sptk import numcore as nc
from sptk.corpus import LabeledDataset
from sptk.encoder.checkpoint import EncoderCheckpoint
from sptk.encoder.heads import ClsHead, SpanHead, TokenHead, decode_span, multichoice_scores
from sptk.encoder.model import Encoder, EncoderConfig, init_encoder
from sptk.errors import ConfigError
from sptk.finetune import metrics as M
from sptk.finetune.tasks import EncodedExample, TaskCodec
from sptk.numcore import LRSchedule, backward, clip_global_norm, lr_at_step
from sptk.predictions import PredictionSet

_MINIMIZE = {"mse", "bce"}


def task_metric_name(task: str) -> str:
    return {
        "multiclass": "accuracy",
        "multichoice": "accuracy",
        "regression": "pearson",
        "multilabel": "micro_auc",
        "span": "span_f1",
        "token": "entity_f1",
    }[task]


def default_validation_metric(task: str) -> str:
    return {
        "multiclass": "accuracy",
        "multichoice": "accuracy",
        "regression": "mse",
        "multilabel": "bce",
        "span": "span_f1",
        "token": "entity_f1",
    }[task]


@dataclass
class FinetuneConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: object = (1e-4, 1e-5)
    max_seq_len: int = 512
    patience: int = 3
    validation_metric: str | None = None
    warmup_fraction: float = 0.06
    grad_clip: float = 1.0
    dropout: float | None = None  # None keeps the encoder config's rate

    @classmethod
    def mlm_style(cls, **kw) -> "FinetuneConfig":
        """RoBERTa-style finetuning defaults (single 2e-5 rate)."""
        base = dict(learning_rate=2e-5)
        base.update(kw)
        return cls(**base)

    def lr_grid(self) -> list[float]:
        if isinstance(self.learning_rate, (int, float)):
            return [float(self.learning_rate)]
        return [float(v) for v in self.learning_rate]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learning_rate"] = self.lr_grid()
        return d


@dataclass
class MetricReport:
    metric: str
    value: float
    n_examples: int
    curve: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FinetuneResult:
    encoder: Encoder
    head: object
    report: MetricReport
    test_predictions: object
    validation_predictions: object


def _derived_seed(seed: int, *tags) -> int:
    return int(np.random.SeedSequence((seed,) + tags).generate_state(1)[0])


def _build_encoder(init, seed: int, dropout: float | None) -> Encoder:
    if isinstance(init, EncoderCheckpoint):
        enc = init.to_encoder()
    elif isinstance(init, EncoderConfig):
        enc = init_encoder(init, seed=_derived_seed(seed, 101))
    else:
        raise ConfigError("init must be an EncoderCheckpoint or EncoderConfig")
    if dropout is not None:
        enc.config = EncoderConfig.from_dict({**enc.config.to_dict(),
                                              "dropout": dropout})
    return enc


def _make_head(task: str, hidden: int, n_classes: int, n_tags: int, seed: int):
    head_seed = _derived_seed(seed, 202)
    if task in ("multiclass",):
        return ClsHead(hidden, n_classes, head_seed)
    if task == "multilabel":
        return ClsHead(hidden, n_classes, head_seed)
    if task == "regression":
        return ClsHead(hidden, 1, head_seed)
    if task == "multichoice":
        return ClsHead(hidden, 1, head_seed)
    if task == "token":
        return TokenHead(hidden, n_tags, head_seed)
    if task == "span":
        return SpanHead(hidden, head_seed)
    raise ConfigError(f"unsupported task {task!r}")


def _batch_forward(task, encoder, head, codec, batch, dropout_rng=None):
    """Returns (loss Tensor, per-example outputs for prediction building)."""
    if task in ("multiclass", "multilabel", "regression"):
        ids, mask = codec.pad_batch([ex.ids for ex in batch])
        logits = head.logits(encoder, ids, mask, dropout_rng=dropout_rng)
        if task == "multiclass":
            targets = np.asarray([ex.target for ex in batch], dtype=np.int64)
            loss = nc.cross_entropy(logits, targets)
        elif task == "multilabel":
            targets = np.stack([ex.target for ex in batch])
            loss = nc.binary_cross_entropy(logits, targets)
        else:
            targets = np.asarray([ex.target for ex in batch],
                                 dtype=logits.data.dtype)[:, None]
            loss = nc.mse(logits, targets)
        return loss, logits.data.copy()
    if task == "multichoice":
        k = len(batch[0].ids)
        pairs = []
        for j in range(k):
            ids, mask = codec.pad_batch([ex.ids[j] for ex in batch])
            pairs.append((ids, mask))
        scores = multichoice_scores(encoder, head, pairs, dropout_rng=dropout_rng)
        targets = np.asarray([ex.target for ex in batch], dtype=np.int64)
        loss = nc.cross_entropy(scores, targets)
        return loss, scores.data.copy()
    if task == "token":
        ids, mask = codec.pad_batch([ex.ids for ex in batch])
        logits = head.logits(encoder, ids, mask, dropout_rng=dropout_rng)
        b, t, n_tags = logits.data.shape
        targets = np.full((b, t), -1, dtype=np.int64)
        for i, ex in enumerate(batch):
            targets[i, : len(ex.target)] = ex.target
        flat_t = targets.reshape(-1)
        weights = (flat_t >= 0).astype(logits.data.dtype)
        safe_t = np.where(flat_t >= 0, flat_t, 0)
        loss = nc.cross_entropy(nc.reshape(logits, (b * t, n_tags)), safe_t,
                                weights=weights)
        return loss, logits.data.copy()
    if task == "span":
        ids, mask = codec.pad_batch([ex.ids for ex in batch])
        start_logits, end_logits = head.logits(encoder, ids, mask,
                                               dropout_rng=dropout_rng)
        starts = np.asarray([ex.target[0] for ex in batch], dtype=np.int64)
        ends = np.asarray([ex.target[1] for ex in batch], dtype=np.int64)
        loss = nc.scale(
            nc.add(nc.cross_entropy(start_logits, starts),
                   nc.cross_entropy(end_logits, ends)),
            0.5,
        )
        return loss, (start_logits.data.copy(), end_logits.data.copy())
    raise ConfigError(f"unsupported task {task!r}")


def _softmax_np(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid_np(x):
    return np.where(x >= 0, 1 / (1 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1 + np.exp(-np.abs(x))))


def _evaluate(task, encoder, head, codec, examples, batch_size):
    """Forward the whole split; returns per-example prediction payloads."""
    outputs = []
    for batch in codec.batches(examples, batch_size):
        _, out = _batch_forward(task, encoder, head, codec, batch)
        for i, ex in enumerate(batch):
            if task == "span":
                outputs.append((ex, (out[0][i], out[1][i])))
            else:
                outputs.append((ex, out[i]))
    return outputs


def _span_prediction_text(ex: EncodedExample, start_logits, end_logits):
    valid = np.zeros(len(ex.ids), dtype=bool)
    for tok in ex.token_word:
        valid[tok] = True
    s, e = decode_span(start_logits, end_logits, valid)
    ws = ex.token_word.get(s, 0)
    we = ex.token_word.get(e, ws)
    if we < ws:
        ws, we = we, ws
    return " ".join(ex.context_words[ws : we + 1])


def _metric_value(task, metric, outputs, codec):
    if task in ("multiclass", "multichoice"):
        preds = np.asarray([np.argmax(o) for _, o in outputs])
        labels = np.asarray([ex.target for ex, _ in outputs])
        return M.accuracy(preds, labels)
    if task == "multilabel":
        logits = np.stack([o for _, o in outputs])
        labels = np.stack([ex.target for ex, _ in outputs])
        if metric == "bce":
            per = np.maximum(logits, 0) - logits * labels + np.log1p(
                np.exp(-np.abs(logits)))
            return float(per.mean())
        return M.micro_auc(_sigmoid_np(logits), labels)
    if task == "regression":
        preds = np.asarray([float(o[0]) for _, o in outputs])
        labels = np.asarray([ex.target for ex, _ in outputs])
        if metric == "mse":
            return float(((preds - labels) ** 2).mean())
        return M.pearson(preds, labels)
    if task == "span":
        scores = [
            M.span_f1(_span_prediction_text(ex, s, e), ex.gold_answers)
            for ex, (s, e) in outputs
        ]
        return float(np.mean(scores))
    if task == "token":
        pred_seqs, gold_seqs = [], []
        for ex, out in outputs:
            pred_tags = [
                codec.tag_names[int(np.argmax(out[pos]))] for pos in ex.word_starts
            ]
            pred_seqs.append(pred_tags)
            gold_seqs.append(ex.gold_tags)
        return M.entity_f1(pred_seqs, gold_seqs)
    raise ConfigError(f"unsupported task {task!r}")


def _prediction_payload(task, outputs, codec):
    """PredictionSet for classification-like tasks, JSON rows otherwise."""
    if task in ("multiclass", "multichoice"):
        ids = [ex.id for ex, _ in outputs]
        logits = np.stack([o for _, o in outputs])
        labels = np.asarray([ex.target for ex, _ in outputs])
        return PredictionSet(ids=ids, probs=_softmax_np(logits), labels=labels,
                             kind="multiclass", logits=logits)
    if task == "multilabel":
        ids = [ex.id for ex, _ in outputs]
        logits = np.stack([o for _, o in outputs])
        labels = np.stack([ex.target for ex, _ in outputs])
        return PredictionSet(ids=ids, probs=_sigmoid_np(logits), labels=labels,
                             kind="scores", logits=logits)
    if task == "regression":
        ids = [ex.id for ex, _ in outputs]
        preds = np.asarray([float(o[0]) for _, o in outputs])
        labels = np.asarray([ex.target for ex, _ in outputs])
        return PredictionSet(ids=ids, probs=preds, labels=labels, kind="regression")
    if task == "span":
        return [
            {"id": ex.id, "pred_text": _span_prediction_text(ex, s, e),
             "gold": ex.gold_answers}
            for ex, (s, e) in outputs
        ]
    return [
        {"id": ex.id,
         "pred_tags": [codec.tag_names[int(np.argmax(out[pos]))]
                       for pos in ex.word_starts],
         "gold_tags": ex.gold_tags}
        for ex, out in outputs
    ]


def _improved(value, best, minimize):
    if best is None:
        return True
    return value < best if minimize else value > best


def finetune(init, dataset: LabeledDataset, config: FinetuneConfig, seed: int,
             tokenizer) -> FinetuneResult:
    """Train up to config.epochs with early stopping on the validation metric.

    `init` is an EncoderCheckpoint (pretrained) or an EncoderConfig
    (random initialization). When the config carries an LR grid, each rate is
    trained and the best validation result wins.
    """
    if not dataset.validation:
        raise ConfigError("finetuning requires a validation split for early stopping")
    results = []
    for lr in config.lr_grid():
        results.append(_finetune_single(init, dataset, config, seed, tokenizer, lr))
    minimize = (config.validation_metric or
                default_validation_metric(dataset.task_type)) in _MINIMIZE
    best = results[0]
    for cand in results[1:]:
        if _improved(cand.report.config["best_validation"],
                     best.report.config["best_validation"], minimize):
            best = cand
    return best


def _finetune_single(init, dataset, config, seed, tokenizer, lr) -> FinetuneResult:
    task = dataset.task_type
    val_metric = config.validation_metric or default_validation_metric(task)
    minimize = val_metric in _MINIMIZE
    encoder = _build_encoder(init, seed, config.dropout)
    max_len = min(config.max_seq_len, encoder.config.max_positions)
    codec = TaskCodec(dataset, tokenizer, max_len)
    n_tags = len(codec.tag_vocab) if task == "token" else 0
    head = _make_head(task, encoder.hidden, dataset.n_classes, n_tags, seed)

    train = [codec.encode_record(r) for r in dataset.train]
    val = [codec.encode_record(r) for r in dataset.validation]
    test = [codec.encode_record(r) for r in dataset.test] if dataset.test else []

    params = {**encoder.params, **head.parameters()}
    param_list = [params[k] for k in sorted(params)]
    opt_state = nc.init_optimizer_state(param_list)
    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    total_updates = config.epochs * steps_per_epoch
    schedule = None
    if total_updates > 1:
        warmup = min(max(1, round(config.warmup_fraction * total_updates)),
                     total_updates - 1)
        schedule = LRSchedule(lr, warmup, total_updates)

    curve = []
    best_value = None
    best_epoch = 0
    best_params = None
    strikes = 0
    stopped_epoch = 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng(_derived_seed(seed, 3, epoch))
        for batch in codec.batches(train, config.batch_size, rng=rng):
            step += 1
            step_lr = lr_at_step(schedule, min(step, schedule.total_steps)) \
                if schedule is not None else lr
            drng = (np.random.default_rng(_derived_seed(seed, 4, step))
                    if encoder.config.dropout > 0 else None)
            loss, _ = _batch_forward(task, encoder, head, codec, batch,
                                     dropout_rng=drng)
            for p in param_list:
                p.zero_grad()
            backward(loss)
            clip_global_norm(param_list, config.grad_clip)
            nc.adamw_step(param_list, [p.grad for p in param_list], opt_state,
                          step_lr)
        outputs = _evaluate(task, encoder, head, codec, val, config.batch_size)
        value = _metric_value(task, val_metric, outputs, codec)
        curve.append(value)
        stopped_epoch = epoch
        if _improved(value, best_value, minimize):
            best_value = value
            best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in params.items()}
            strikes = 0
        else:
            strikes += 1
            if strikes >= config.patience:
                break
    if best_params is not None:
        for k, p in params.items():
            p.data = best_params[k]

    eval_split = test if test else val
    outputs = _evaluate(task, encoder, head, codec, eval_split, config.batch_size)
    test_metric = task_metric_name(task)
    test_value = _metric_value(task, test_metric, outputs, codec)
    val_outputs = _evaluate(task, encoder, head, codec, val, config.batch_size)
    report = MetricReport(
        metric=test_metric,
        value=test_value,
        n_examples=len(eval_split),
        curve=curve,
        stopped_epoch=stopped_epoch,
        best_epoch=best_epoch,
        config={
            **config.to_dict(),
            "chosen_lr": lr,
            "task": task,
            "seed": seed,
            "best_validation": best_value,
            "validation_metric": val_metric,
        },
    )
    return FinetuneResult(
        encoder=encoder,
        head=head,
        report=report,
        test_predictions=_prediction_payload(task, outputs, codec),
        validation_predictions=_prediction_payload(task, val_outputs, codec),
    )
