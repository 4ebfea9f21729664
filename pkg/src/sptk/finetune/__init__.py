"""Supervised finetuning with early stopping plus the evaluation metric suite."""

from sptk.finetune.metrics import (
    accuracy,
    benefit_percent,
    entity_f1,
    entity_f1_detailed,
    micro_auc,
    normalize_answer,
    pearson,
    span_f1,
)
from sptk.finetune.loop import (
    FinetuneConfig,
    FinetuneResult,
    MetricReport,
    finetune,
    task_metric_name,
)

__all__ = [
    "accuracy",
    "benefit_percent",
    "entity_f1",
    "entity_f1_detailed",
    "micro_auc",
    "normalize_answer",
    "pearson",
    "span_f1",
    "FinetuneConfig",
    "FinetuneResult",
    "MetricReport",
    "finetune",
    "task_metric_name",
]
