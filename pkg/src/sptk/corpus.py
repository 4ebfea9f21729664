"""Pretraining-corpus construction from labeled datasets.

Covers dataset ingestion (JSON-lines), sentence splitting, the three corpus
ordering strategies (standard / shuffled / tfidf), split carving, size-matched
sampling, and packing token streams into fixed-length rows.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sptk import subword
from sptk.errors import ConfigError, InputError
from sptk.subword import CLS, PAD, SEP, TokenizerModel

TASK_TYPES = ("multiclass", "multilabel", "regression", "token", "span", "multichoice")
STRATEGIES = ("standard", "shuffled", "tfidf")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class Record:
    id: str
    text_a: str = ""
    text_b: str | None = None
    label: object = None
    tokens: list | None = None
    tags: list | None = None
    context: str | None = None
    question: str | None = None
    answers: list | None = None
    endings: list | None = None

    def text_parts(self) -> list[str]:
        """All text carried by the record, in a fixed order."""
        parts = []
        for t in (self.text_a, self.text_b, self.context):
            if t:
                parts.append(t)
        if self.endings:
            parts.extend(e for e in self.endings if e)
        return parts

    def to_json(self) -> str:
        d = {"id": self.id, "text_a": self.text_a}
        for k in ("text_b", "label", "tokens", "tags", "context", "question",
                  "answers", "endings"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return json.dumps(d, ensure_ascii=False, sort_keys=True)


@dataclass
class LabeledDataset:
    name: str
    task_type: str
    n_classes: int
    train: list[Record] = field(default_factory=list)
    validation: list[Record] = field(default_factory=list)
    test: list[Record] = field(default_factory=list)

    def __post_init__(self):
        if self.task_type not in TASK_TYPES:
            raise ConfigError(f"unknown task_type {self.task_type!r}")
        seen = set()
        for rec in self.train + self.validation + self.test:
            if rec.id in seen:
                raise InputError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if not rec.text_a:
                raise InputError(f"record {rec.id!r} has empty text_a")
            self._check_label(rec)

    def _check_label(self, rec: Record) -> None:
        label = rec.label
        if label is None:
            if self.task_type in ("multiclass", "multilabel", "regression",
                                  "multichoice"):
                raise InputError(f"record {rec.id!r} has no label")
            return
        if self.task_type == "multiclass" and not 0 <= int(label) < self.n_classes:
            raise InputError(f"record {rec.id!r}: label {label} out of range")
        if self.task_type == "multilabel":
            if len(label) != self.n_classes or any(v not in (0, 1) for v in label):
                raise InputError(f"record {rec.id!r}: bad multilabel vector")
        if self.task_type == "multichoice":
            if rec.endings and not 0 <= int(label) < len(rec.endings):
                raise InputError(f"record {rec.id!r}: label not an ending index")

    def split(self, name):
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.name}|{self.task_type}|{self.n_classes}".encode())
        for split in (self.train, self.validation, self.test):
            for rec in split:
                h.update(rec.to_json().encode("utf-8"))
                h.update(b"\n")
        return h.hexdigest()


def _record_from_json(line: str) -> Record:
    d = json.loads(line)
    if "id" not in d:
        raise InputError("record missing id")
    known = {f for f in Record.__dataclass_fields__}
    return Record(**{k: v for k, v in d.items() if k in known})


def write_dataset(dataset: LabeledDataset, out_dir) -> None:
    """Dataset directory: meta.json plus one JSONL file per non-empty split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": dataset.name,
        "task_type": dataset.task_type,
        "n_classes": dataset.n_classes,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    for split in ("train", "validation", "test"):
        records = dataset.split(split)
        if records:
            lines = "".join(rec.to_json() + "\n" for rec in records)
            (out_dir / f"{split}.jsonl").write_text(lines, encoding="utf-8")


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise InputError(f"no dataset at {path} (missing meta.json)")
    meta = json.loads(meta_path.read_text())
    splits = {}
    for split in ("train", "validation", "test"):
        f = path / f"{split}.jsonl"
        if f.exists():
            splits[split] = [
                _record_from_json(line)
                for line in f.read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]
        else:
            splits[split] = []
    return LabeledDataset(
        name=meta["name"],
        task_type=meta["task_type"],
        n_classes=int(meta.get("n_classes", 0)),
        **splits,
    )


# ---------------------------------------------------------------------------
# sentence handling and corpora
# ---------------------------------------------------------------------------

def sentence_split(text: str) -> list[str]:
    """Split on ./!/? followed by whitespace or end; terminators stay attached.

    Whitespace is normalized first, so joining the pieces with single spaces
    reproduces the whitespace-normalized input. A terminator with no following
    whitespace (as in "v1.2") does not end a sentence.
    """
    text = subword.normalize_whitespace(text)
    out: list[str] = []
    buf: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        buf.append(ch)
        if ch in ".!?":
            j = i + 1
            while j < n and text[j] in ".!?":
                buf.append(text[j])
                j += 1
            if j >= n or text[j] == " ":
                piece = "".join(buf).strip()
                if piece:
                    out.append(piece)
                buf = []
                j += 1  # consume the separating space
            i = j
        else:
            i += 1
    piece = "".join(buf).strip()
    if piece:
        out.append(piece)
    return out


@dataclass
class PretrainCorpus:
    documents: list[list[str]]
    strategy: str
    seed: int
    source_fingerprint: str = ""

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown ordering strategy {self.strategy!r}")

    def sentences(self) -> list[str]:
        return [s for doc in self.documents for s in doc]

    def total_bytes(self) -> int:
        return sum(len(" ".join(doc).encode("utf-8")) for doc in self.documents)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.strategy}|{self.seed}|{self.source_fingerprint}".encode())
        for doc in self.documents:
            for s in doc:
                h.update(s.encode("utf-8"))
                h.update(b"\n")
            h.update(b"\n")
        return h.hexdigest()


def save_corpus(corpus: PretrainCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# strategy={corpus.strategy} seed={corpus.seed}\n")
        for i, doc in enumerate(corpus.documents):
            if i:
                f.write("\n")
            for s in doc:
                f.write(s + "\n")


def load_corpus(path) -> PretrainCorpus:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# strategy="):
        raise InputError(f"{path} is not a corpus file")
    m = re.match(r"# strategy=(\S+) seed=(-?\d+)", lines[0])
    if not m:
        raise InputError("malformed corpus header")
    docs: list[list[str]] = []
    cur: list[str] = []
    for line in lines[1:]:
        if line == "":
            if cur:
                docs.append(cur)
                cur = []
        else:
            cur.append(line)
    if cur:
        docs.append(cur)
    return PretrainCorpus(documents=docs, strategy=m.group(1), seed=int(m.group(2)))


def _document_sentences(record: Record) -> list[str]:
    sents = []
    for part in record.text_parts():
        sents.extend(sentence_split(part))
    return sents


def build_corpus(dataset: LabeledDataset, strategy: str, seed: int) -> PretrainCorpus:
    """Assemble the unlabeled pretraining corpus from the train split.

    standard: example order shuffled, sentences within an example kept
    contiguous and in original order. shuffled: all sentences pooled and
    permuted. tfidf: greedy similarity chain over the pooled sentences.
    Labels never enter the corpus.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown ordering strategy {strategy!r}")
    if not dataset.train:
        raise InputError("train split is empty")
    rng = np.random.default_rng(seed)
    docs = [_document_sentences(rec) for rec in dataset.train]
    docs = [d for d in docs if d]
    if strategy == "standard":
        order = rng.permutation(len(docs))
        documents = [docs[i] for i in order]
    else:
        pool = [s for d in docs for s in d]
        if strategy == "shuffled":
            order = rng.permutation(len(pool))
            documents = [[pool[i] for i in order]]
        else:
            adjacency = original_adjacency(docs)
            order, _ = tfidf_reorder(pool, adjacency, seed)
            documents = [[pool[i] for i in order]]
    return PretrainCorpus(
        documents=documents,
        strategy=strategy,
        seed=seed,
        source_fingerprint=dataset.fingerprint(),
    )


def original_adjacency(docs: list[list[str]]) -> set[tuple[int, int]]:
    """Unordered index pairs of sentences adjacent within a source document,
    indices relative to the pooled sentence list.
    """
    pairs = set()
    base = 0
    for doc in docs:
        for k in range(len(doc) - 1):
            i, j = base + k, base + k + 1
            pairs.add((i, j))
            pairs.add((j, i))
        base += len(doc)
    return pairs


# ---------------------------------------------------------------------------
# TF-IDF reordering
# ---------------------------------------------------------------------------

_PUNCT = string.punctuation


def _terms(sentence: str) -> list[str]:
    out = []
    for tok in sentence.lower().split():
        tok = tok.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


def tfidf_vectors(sentences: list[str]) -> list[dict[str, float]]:
    """L2-normalized TF-IDF vectors with sentences as documents.

    tf = raw count in the sentence; idf = ln((1+N)/(1+df)) + 1.
    """
    n = len(sentences)
    term_lists = [_terms(s) for s in sentences]
    df: dict[str, int] = {}
    for terms in term_lists:
        for t in set(terms):
            df[t] = df.get(t, 0) + 1
    idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in df.items()}
    vectors = []
    for terms in term_lists:
        counts: dict[str, float] = {}
        for t in terms:
            counts[t] = counts.get(t, 0.0) + 1.0
        vec = {t: c * idf[t] for t, c in counts.items()}
        norm = math.sqrt(sum(v * v for v in vec.values()))
        if norm > 0:
            vec = {t: v / norm for t, v in vec.items()}
        vectors.append(vec)
    return vectors


def cosine(a: dict[str, float], b: dict[str, float]) -> float:
    if len(b) < len(a):
        a, b = b, a
    return sum(v * b.get(t, 0.0) for t, v in a.items())


def tfidf_reorder(
    sentences: list[str],
    adjacency: set[tuple[int, int]],
    seed: int,
) -> tuple[list[int], int]:
    """Greedy max-similarity chain over sentence indices.

    Candidates originally adjacent to the previously placed sentence are
    excluded so the chain cannot fall back into the source order; when every
    remaining candidate is excluded the exclusion is waived for that step.
    Returns (order, waiver_count); order is a permutation of range(len(sentences)).
    """
    if len(sentences) < 2:
        raise InputError("tfidf_reorder needs at least 2 sentences")
    vectors = tfidf_vectors(sentences)
    rng = np.random.default_rng(seed)
    start = int(rng.integers(len(sentences)))
    order = [start]
    used = {start}
    waivers = 0
    while len(order) < len(sentences):
        prev = order[-1]
        candidates = [i for i in range(len(sentences)) if i not in used]
        allowed = [i for i in candidates if (prev, i) not in adjacency]
        if not allowed:
            allowed = candidates
            waivers += 1
        best = max(allowed, key=lambda i: (cosine(vectors[prev], vectors[i]), -i))
        order.append(best)
        used.add(best)
    return order, waivers


def mean_adjacent_similarity(sentences: list[str], order: list[int]) -> float:
    vectors = tfidf_vectors(sentences)
    sims = [cosine(vectors[a], vectors[b]) for a, b in zip(order, order[1:])]
    return float(np.mean(sims)) if sims else 0.0


# ---------------------------------------------------------------------------
# split carving
# ---------------------------------------------------------------------------


def split_halves(dataset: LabeledDataset, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Random half/half partition of the train split; validation and test are
    carried unchanged on both halves."""
    n = len(dataset.train)
    if n < 2:
        raise InputError("need at least 2 train records to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    cut = (n + 1) // 2
    a_idx = sorted(order[:cut])
    b_idx = sorted(order[cut:])
    half_a = LabeledDataset(
        name=dataset.name + "-A",
        task_type=dataset.task_type,
        n_classes=dataset.n_classes,
        train=[dataset.train[i] for i in a_idx],
        validation=list(dataset.validation),
        test=list(dataset.test),
    )
    half_b = LabeledDataset(
        name=dataset.name + "-B",
        task_type=dataset.task_type,
        n_classes=dataset.n_classes,
        train=[dataset.train[i] for i in b_idx],
        validation=list(dataset.validation),
        test=list(dataset.test),
    )
    return half_a, half_b


def carve_validation(dataset: LabeledDataset, n: int, seed: int = 0) -> LabeledDataset:
    """Remove n seeded-random train records to act as the validation split.

    When the dataset has a validation split but no test split, the validation
    split is first promoted to test and a fresh validation is carved.
    """
    if n < 1:
        raise InputError("must carve at least 1 record")
    if n >= len(dataset.train):
        raise InputError(f"cannot carve {n} of {len(dataset.train)} train records")
    test = list(dataset.test)
    if dataset.validation and not dataset.test:
        test = list(dataset.validation)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset.train))
    val_idx = set(order[:n].tolist())
    validation = [dataset.train[i] for i in sorted(val_idx)]
    train = [rec for i, rec in enumerate(dataset.train) if i not in val_idx]
    return LabeledDataset(
        name=dataset.name,
        task_type=dataset.task_type,
        n_classes=dataset.n_classes,
        train=train,
        validation=validation,
        test=test,
    )


def size_matched_sample(
    external: PretrainCorpus, target_bytes: int, seed: int
) -> PretrainCorpus:
    """Contiguous run of documents (cyclic, random start) whose UTF-8 size
    lands within 1% of target_bytes."""
    if target_bytes < 1:
        raise InputError("target_bytes must be positive")
    doc_bytes = [len(" ".join(d).encode("utf-8")) for d in external.documents]
    total = sum(doc_bytes)
    if total < target_bytes:
        raise InputError(
            f"external corpus has {total} bytes, below target {target_bytes}"
        )
    rng = np.random.default_rng(seed)
    start = int(rng.integers(len(external.documents)))
    picked: list[list[str]] = []
    acc = 0
    low, high = 0.99 * target_bytes, 1.01 * target_bytes
    for k in range(len(external.documents)):
        i = (start + k) % len(external.documents)
        doc = external.documents[i]
        if acc + doc_bytes[i] > high:
            # take a sentence-granularity prefix of the final document
            prefix: list[str] = []
            for s in doc:
                extra = len(s.encode("utf-8")) + (1 if prefix else 0)
                if acc + extra > high:
                    break
                prefix.append(s)
                acc += extra
            if prefix:
                picked.append(prefix)
            break
        picked.append(list(doc))
        acc += doc_bytes[i]
        if acc >= low:
            break
    if not low <= acc <= high:
        raise InputError(
            f"could not hit byte target: accumulated {acc} for target {target_bytes}"
        )
    return PretrainCorpus(
        documents=picked,
        strategy=external.strategy,
        seed=seed,
        source_fingerprint=external.fingerprint(),
    )


# ---------------------------------------------------------------------------
# sequence packing
# ---------------------------------------------------------------------------


@dataclass
class PackedBatch:
    """Fixed-length rows of token ids; PAD only after the last real token."""

    tokens: np.ndarray      # (rows, seq_len) int32
    mask: np.ndarray        # (rows, seq_len) uint8, 1 = real token
    doc_start: np.ndarray   # (rows, seq_len) bool, True at each CLS position
    seq_len: int

    @property
    def n_rows(self) -> int:
        return self.tokens.shape[0]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.tokens.tobytes())
        h.update(self.mask.tobytes())
        return h.hexdigest()


def pack_sequences(
    corpus: PretrainCorpus, tokenizer: TokenizerModel, seq_len: int
) -> PackedBatch:
    """CLS + document tokens + SEP per document, chunked greedily into rows.

    Documents may span row boundaries, so no text is truncated away; only the
    final partial row is padded.
    """
    if seq_len < 8:
        raise ConfigError("seq_len must be at least 8")
    stream: list[int] = []
    starts: list[int] = []
    for doc in corpus.documents:
        starts.append(len(stream))
        stream.append(CLS)
        stream.extend(subword.encode(tokenizer, " ".join(doc)))
        stream.append(SEP)
    total = len(stream)
    n_rows = (total + seq_len - 1) // seq_len
    tokens = np.full((n_rows, seq_len), PAD, dtype=np.int32)
    mask = np.zeros((n_rows, seq_len), dtype=np.uint8)
    doc_start = np.zeros((n_rows, seq_len), dtype=bool)
    arr = np.asarray(stream, dtype=np.int32)
    for r in range(n_rows):
        chunk = arr[r * seq_len : (r + 1) * seq_len]
        tokens[r, : len(chunk)] = chunk
        mask[r, : len(chunk)] = 1
    for pos in starts:
        doc_start[pos // seq_len, pos % seq_len] = True
    return PackedBatch(tokens=tokens, mask=mask, doc_start=doc_start, seq_len=seq_len)


def unpack_stream(batch: PackedBatch) -> list[int]:
    """Strip padding and restore the original token stream."""
    out: list[int] = []
    for r in range(batch.n_rows):
        real = batch.tokens[r][batch.mask[r] == 1]
        out.extend(int(t) for t in real)
    return out
