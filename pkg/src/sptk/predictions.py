"""Per-example prediction sets exchanged between finetuning and analysis."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sptk.errors import InputError


@dataclass
class PredictionSet:
    """Aligned ids, per-example probability vectors (or scalars), gold labels.

    kind: "multiclass" (rows sum to 1), "scores" (independent per-class
    probabilities, e.g. multilabel sigmoids), or "regression" (scalars).
    """

    ids: list
    probs: np.ndarray
    labels: np.ndarray
    kind: str = "multiclass"
    logits: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs)
        self.labels = np.asarray(self.labels)
        if len(self.ids) != len(self.probs) or len(self.ids) != len(self.labels):
            raise InputError("ids, probs, and labels must align")
        if sorted(self.ids) != list(self.ids):
            order = np.argsort(np.asarray(self.ids, dtype=object))
            self.ids = [self.ids[i] for i in order]
            self.probs = self.probs[order]
            self.labels = self.labels[order]
            if self.logits is not None:
                self.logits = np.asarray(self.logits)[order]
        if len(set(self.ids)) != len(self.ids):
            raise InputError("duplicate example ids")
        if self.kind == "multiclass":
            if self.probs.ndim != 2:
                raise InputError("multiclass predictions need (N, C) probabilities")
            if len(self.probs) and (
                np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-5
                or self.probs.min() < -1e-9
            ):
                raise InputError("probability rows must be non-negative and sum to 1")

    def __len__(self):
        return len(self.ids)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1] if self.probs.ndim == 2 else 0

    def argmax(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


def save_predictions(pred: PredictionSet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, ex_id in enumerate(pred.ids):
            row = {"id": ex_id}
            if pred.kind == "regression":
                row["pred"] = float(pred.probs[i])
                row["label"] = float(pred.labels[i])
            else:
                row["probs"] = [float(v) for v in pred.probs[i]]
                label = pred.labels[i]
                row["label"] = (
                    [int(v) for v in label] if np.ndim(label) else int(label)
                )
            if pred.logits is not None:
                row["logits"] = [float(v) for v in np.atleast_1d(pred.logits[i])]
            f.write(json.dumps(row) + "\n")


def load_predictions(path, kind: str = "multiclass") -> PredictionSet:
    ids, probs, labels, logits = [], [], [], []
    has_logits = True
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        ids.append(row["id"])
        if kind == "regression":
            probs.append(row["pred"])
        else:
            probs.append(row["probs"])
        labels.append(row["label"])
        if "logits" in row:
            logits.append(row["logits"])
        else:
            has_logits = False
    return PredictionSet(
        ids=ids,
        probs=np.asarray(probs),
        labels=np.asarray(labels),
        kind=kind,
        logits=np.asarray(logits) if has_logits and logits else None,
    )
