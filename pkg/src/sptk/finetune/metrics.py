"""Evaluation metrics: accuracy, Pearson, micro-averaged AUC, span F1 over
normalized answer text, entity-level BIO F1, and the benefit percentage."""

from __future__ import annotations

import re
import string
from collections import Counter

import numpy as np

from sptk.errors import UndefinedMetricError

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def accuracy(preds, labels) -> float:
    """Exact-match fraction; 2-D preds are argmaxed first."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.ndim == 2:
        preds = np.argmax(preds, axis=1)
    if len(preds) != len(labels) or len(preds) == 0:
        raise UndefinedMetricError("need equal-length, non-empty inputs")
    return float((preds == labels).mean())


def pearson(preds, labels) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(preds) != len(labels) or len(preds) < 2:
        raise UndefinedMetricError("pearson needs >= 2 aligned values")
    px = preds - preds.mean()
    py = labels - labels.mean()
    denom = np.sqrt((px * px).sum() * (py * py).sum())
    if denom == 0:
        raise UndefinedMetricError("pearson undefined for zero-variance input")
    return float((px * py).sum() / denom)


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def micro_auc(scores, labels) -> float:
    """Rank-based AUC over the flattened (example, class) pairs, mid-rank ties."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape or scores.size == 0:
        raise UndefinedMetricError("scores and labels must align")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("micro_auc undefined for single-class labels")
    ranks = _midranks(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def span_f1(prediction: str, gold_answers) -> float:
    """Whitespace-token bag overlap F1 of normalized text, max over golds."""
    golds = list(gold_answers)
    if not golds:
        raise UndefinedMetricError("span_f1 needs at least one gold answer")
    pred_tokens = normalize_answer(prediction).split()
    best = 0.0
    for gold in golds:
        gold_tokens = normalize_answer(gold).split()
        if not pred_tokens and not gold_tokens:
            best = max(best, 1.0)
            continue
        common = Counter(pred_tokens) & Counter(gold_tokens)
        n_same = sum(common.values())
        if n_same == 0:
            continue
        precision = n_same / len(pred_tokens)
        recall = n_same / len(gold_tokens)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


def _bio_entities(tags) -> tuple[list[tuple[int, int, str]], int]:
    """Maximal (start, end, type) spans; I- without a live B- is repaired to B-."""
    entities = []
    repaired = 0
    start, etype = None, None
    for i, tag in enumerate(tags):
        if tag.startswith("B-"):
            if start is not None:
                entities.append((start, i - 1, etype))
            start, etype = i, tag[2:]
        elif tag.startswith("I-"):
            if start is None or tag[2:] != etype:
                if start is not None:
                    entities.append((start, i - 1, etype))
                repaired += 1
                start, etype = i, tag[2:]
        else:
            if start is not None:
                entities.append((start, i - 1, etype))
            start, etype = None, None
    if start is not None:
        entities.append((start, len(tags) - 1, etype))
    return entities, repaired


def entity_f1_detailed(pred_seqs, gold_seqs) -> tuple[float, int]:
    """Micro-averaged F1 over exact (span, type) matches; returns the count of
    malformed I- tags repaired in the predictions as well."""
    if len(pred_seqs) != len(gold_seqs):
        raise UndefinedMetricError("prediction and gold corpora must align")
    n_pred = n_gold = n_match = 0
    repaired_total = 0
    for si, (pred, gold) in enumerate(zip(pred_seqs, gold_seqs)):
        if len(pred) != len(gold):
            raise UndefinedMetricError(f"sequence {si} length mismatch")
        pred_ents, repaired = _bio_entities(pred)
        gold_ents, _ = _bio_entities(gold)
        repaired_total += repaired
        n_pred += len(pred_ents)
        n_gold += len(gold_ents)
        gold_multiset = Counter(gold_ents)
        for ent in pred_ents:
            if gold_multiset[ent] > 0:
                gold_multiset[ent] -= 1
                n_match += 1
    precision = n_match / n_pred if n_pred else 0.0
    recall = n_match / n_gold if n_gold else 0.0
    if precision + recall == 0:
        return 0.0, repaired_total
    return 2 * precision * recall / (precision + recall), repaired_total


def entity_f1(pred_seqs, gold_seqs) -> float:
    return entity_f1_detailed(pred_seqs, gold_seqs)[0]


def benefit_percent(rand_init_metric: float, candidate_metric: float,
                    reference_metric: float) -> float:
    """100 * (candidate - rand_init) / (reference - rand_init)."""
    denom = reference_metric - rand_init_metric
    if denom == 0:
        raise UndefinedMetricError(
            "benefit undefined when reference equals the random-init baseline"
        )
    return 100.0 * (candidate_metric - rand_init_metric) / denom
