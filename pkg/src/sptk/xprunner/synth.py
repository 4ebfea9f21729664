"""Synthetic labeled datasets whose labels follow latent token co-occurrence.

Each class owns a disjoint set of topic words; example text mixes topic words
of its class with shared background words, so token co-occurrence statistics
(the thing MLM/RTD can learn from unlabeled text) predict the label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sptk.corpus import LabeledDataset, Record
from sptk.errors import SpecError

PATTERN_FAMILIES = ("topic",)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SyntheticDatasetSpec:
    vocabulary_size: int = 400
    examples: int = 1200
    classes: int = 4
    pattern_family: str = "topic"
    noise_rate: float = 0.05
    seed: int = 0
    topic_fraction: float = 0.5
    sentences_per_example: tuple = (2, 4)
    words_per_sentence: tuple = (6, 10)

    def __post_init__(self):
        if self.classes < 2:
            raise SpecError("need at least 2 classes")
        if not 0 <= self.noise_rate < 0.5:
            raise SpecError("noise_rate must lie in [0, 0.5)")
        if self.pattern_family not in PATTERN_FAMILIES:
            raise SpecError(f"unknown pattern family {self.pattern_family!r}")
        if self.examples < self.classes:
            raise SpecError("need at least one example per class")

    @property
    def topics_per_class(self) -> int:
        return max(3, round(0.3 * self.vocabulary_size / self.classes))


def _make_words(rng: np.random.Generator, count: int) -> list[str]:
    words = []
    seen = set()
    while len(words) < count:
        n_syll = int(rng.integers(2, 4))
        w = "".join(
            _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
            + _VOWELS[int(rng.integers(len(_VOWELS)))]
            for _ in range(n_syll)
        )
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def gen_synthetic_dataset(spec: SyntheticDatasetSpec) -> LabeledDataset:
    """Balanced classes (within one), stratified 80/10/10 splits, deterministic
    for a given (spec, seed)."""
    rng = np.random.default_rng(spec.seed)
    n_topic_total = spec.topics_per_class * spec.classes
    if spec.vocabulary_size < n_topic_total + spec.classes:
        raise SpecError(
            f"vocabulary of {spec.vocabulary_size} too small for "
            f"{spec.classes} classes x {spec.topics_per_class} topic words"
        )
    words = _make_words(rng, spec.vocabulary_size)
    topic_words = [
        words[c * spec.topics_per_class : (c + 1) * spec.topics_per_class]
        for c in range(spec.classes)
    ]
    background = words[n_topic_total:]

    lo_s, hi_s = spec.sentences_per_example
    lo_w, hi_w = spec.words_per_sentence
    per_class = [
        spec.examples // spec.classes + (1 if c < spec.examples % spec.classes else 0)
        for c in range(spec.classes)
    ]
    by_class: list[list[Record]] = [[] for _ in range(spec.classes)]
    idx = 0
    for c in range(spec.classes):
        for _ in range(per_class[c]):
            sentences = []
            for _ in range(int(rng.integers(lo_s, hi_s + 1))):
                n_words = int(rng.integers(lo_w, hi_w + 1))
                toks = []
                for _ in range(n_words):
                    if rng.random() < spec.topic_fraction:
                        toks.append(topic_words[c][int(rng.integers(spec.topics_per_class))])
                    else:
                        toks.append(background[int(rng.integers(len(background)))])
                sentences.append(" ".join(toks) + ".")
            label = c
            if spec.noise_rate and rng.random() < spec.noise_rate:
                label = int((c + 1 + rng.integers(spec.classes - 1)) % spec.classes)
            by_class[c].append(
                Record(id=f"syn{idx:06d}", text_a=" ".join(sentences), label=label)
            )
            idx += 1

    train, validation, test = [], [], []
    for c in range(spec.classes):
        recs = by_class[c]
        order = rng.permutation(len(recs))
        n = len(recs)
        n_val = max(1, round(0.1 * n))
        n_test = max(1, round(0.1 * n))
        n_train = n - n_val - n_test
        shuffled = [recs[i] for i in order]
        train.extend(shuffled[:n_train])
        validation.extend(shuffled[n_train : n_train + n_val])
        test.extend(shuffled[n_train + n_val :])
    train.sort(key=lambda r: r.id)
    validation.sort(key=lambda r: r.id)
    test.sort(key=lambda r: r.id)
    return LabeledDataset(
        name=f"synthetic-{spec.pattern_family}-{spec.seed}",
        task_type="multiclass",
        n_classes=spec.classes,
        train=train,
        validation=validation,
        test=test,
    )


def bag_of_words_oracle_accuracy(dataset: LabeledDataset) -> float:
    """Frequency-based classifier over the train split: per-class token counts
    weighted by inverse overall frequency, argmax wins. Used to certify that a
    synthetic task is learnable from token statistics."""
    counts: dict[str, np.ndarray] = {}
    class_totals = np.zeros(dataset.n_classes)
    for rec in dataset.train:
        for w in rec.text_a.replace(".", " ").split():
            if w not in counts:
                counts[w] = np.zeros(dataset.n_classes)
            counts[w][rec.label] += 1
            class_totals[rec.label] += 1
    correct = 0
    for rec in dataset.train:
        score = np.zeros(dataset.n_classes)
        for w in rec.text_a.replace(".", " ").split():
            if w in counts:
                freq = counts[w]
                score += freq / freq.sum()
        if int(np.argmax(score)) == rec.label:
            correct += 1
    return correct / len(dataset.train)
