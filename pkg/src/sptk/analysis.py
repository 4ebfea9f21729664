"""Post-hoc model comparison: error inconsistency, temperature scaling,
calibrated ensembles, and benefit matrices."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sptk.errors import IncompleteGridError, InputError, UndefinedMetricError
from sptk.finetune.metrics import benefit_percent
from sptk.predictions import PredictionSet

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _check_aligned(a: PredictionSet, b: PredictionSet) -> None:
    if list(a.ids) != list(b.ids):
        raise InputError("prediction sets cover different example ids")
    if not np.array_equal(a.labels, b.labels):
        raise InputError("prediction sets disagree on gold labels")


def error_inconsistency(a: PredictionSet, b: PredictionSet) -> float:
    """Fraction of examples where exactly one of the two models is correct."""
    _check_aligned(a, b)
    ca = a.argmax() == a.labels
    cb = b.argmax() == b.labels
    return float((ca != cb).mean())


@dataclass
class TemperatureModel:
    temperature: float
    nll_before: float
    nll_after: float


def _mean_nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    z = logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def fit_temperature(logits, labels) -> TemperatureModel:
    """Golden-section search for T minimizing mean NLL of softmax(logits / T),
    over ln T in [-4, 4] with tolerance 1e-4."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise InputError("need (N, C) logits with at least 2 classes")
    if len(set(labels.tolist())) < 2:
        raise UndefinedMetricError(
            "temperature fit undefined for single-class validation labels"
        )

    def nll_at(ln_t: float) -> float:
        return _mean_nll(logits, labels, math.exp(ln_t))

    lo, hi = -4.0, 4.0
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = nll_at(x1), nll_at(x2)
    while hi - lo > 1e-4:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = nll_at(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = nll_at(x2)
    t = math.exp(0.5 * (lo + hi))
    before = _mean_nll(logits, labels, 1.0)
    after = _mean_nll(logits, labels, t)
    if after > before:  # never hurt the identity temperature
        t, after = 1.0, before
    return TemperatureModel(temperature=t, nll_before=before, nll_after=after)


def apply_temperature(pred: PredictionSet, temperature: float) -> PredictionSet:
    if pred.logits is None:
        raise InputError("prediction set carries no logits to recalibrate")
    z = np.asarray(pred.logits, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return PredictionSet(ids=list(pred.ids), probs=p, labels=pred.labels.copy(),
                         kind=pred.kind, logits=np.asarray(pred.logits).copy())


def ensemble(a: PredictionSet, b: PredictionSet, t_a: float = 1.0,
             t_b: float = 1.0) -> PredictionSet:
    """Mean of temperature-calibrated probability vectors, re-normalized.

    Regression sets average their scalar predictions instead.
    """
    _check_aligned(a, b)
    if a.kind == "regression":
        preds = (np.asarray(a.probs, dtype=np.float64)
                 + np.asarray(b.probs, dtype=np.float64)) / 2.0
        return PredictionSet(ids=list(a.ids), probs=preds,
                             labels=a.labels.copy(), kind="regression")
    pa = apply_temperature(a, t_a) if a.logits is not None else a
    pb = apply_temperature(b, t_b) if b.logits is not None else b
    mix = (np.asarray(pa.probs, dtype=np.float64)
           + np.asarray(pb.probs, dtype=np.float64)) / 2.0
    mix /= mix.sum(axis=1, keepdims=True)
    return PredictionSet(ids=list(a.ids), probs=mix, labels=a.labels.copy(),
                         kind=a.kind)


def calibrated_ensemble(a: PredictionSet, b: PredictionSet,
                        val_a: PredictionSet, val_b: PredictionSet
                        ) -> tuple[PredictionSet, TemperatureModel, TemperatureModel]:
    """Fit temperatures on validation predictions, ensemble the test ones."""
    ta = fit_temperature(val_a.logits, val_a.labels)
    tb = fit_temperature(val_b.logits, val_b.labels)
    return ensemble(a, b, ta.temperature, tb.temperature), ta, tb


# ---------------------------------------------------------------------------
# benefit matrices
# ---------------------------------------------------------------------------


@dataclass
class BenefitMatrix:
    sources: list
    targets: list
    values: np.ndarray  # (K, K) benefit ratios (benefit percent / 100)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["pretrain\\finetune"] + list(self.targets))
            for i, src in enumerate(self.sources):
                w.writerow([src] + [f"{v:.6f}" for v in self.values[i]])

    def to_json(self, path) -> None:
        payload = {
            "sources": list(self.sources),
            "targets": list(self.targets),
            "values": [[float(v) for v in row] for row in self.values],
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def benefit_matrix(grid: dict, rand_init_row: dict, reference_row: dict,
                   sources: list, targets: list) -> BenefitMatrix:
    """Entry (i, j) = benefit_percent(rand_j, grid[i][j], ref_j) / 100.

    grid maps (source, target) -> metric; rand_init_row and reference_row map
    target -> metric. Missing cells raise with the full missing list.
    """
    missing = []
    for s in sources:
        for t in targets:
            if (s, t) not in grid:
                missing.append((s, t))
    for t in targets:
        if t not in rand_init_row:
            missing.append(("rand_init", t))
        if t not in reference_row:
            missing.append(("reference", t))
    if missing:
        raise IncompleteGridError(missing)
    values = np.zeros((len(sources), len(targets)), dtype=np.float64)
    for i, s in enumerate(sources):
        for j, t in enumerate(targets):
            values[i, j] = benefit_percent(
                rand_init_row[t], grid[(s, t)], reference_row[t]
            ) / 100.0
    return BenefitMatrix(sources=list(sources), targets=list(targets),
                         values=values)
