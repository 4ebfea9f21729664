"""Corpus-trained subword tokenizer (greedy pair merging) with fixed specials.

Words are whitespace pre-tokenized; each word starts with the boundary marker
symbol so merges can absorb it and frequent words collapse to single tokens.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from sptk.errors import InputError, LoadError, RangeError

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = (("[PAD]", PAD), ("[UNK]", UNK), ("[CLS]", CLS), ("[SEP]", SEP), ("[MASK]", MASK))
N_SPECIAL = len(SPECIAL_TOKENS)

BOUNDARY = "▁"  # standalone word-boundary symbol, decodes back to a space

_FORMAT_HEADER = "subword-v1"


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


@dataclass
class TokenizerModel:
    vocab: dict[str, int]
    merges: list[tuple[str, str]]
    alphabet: list[str]
    lowercase: bool = False
    _merge_ranks: dict[tuple[str, str], int] = field(default=None, repr=False)

    def __post_init__(self):
        if self._merge_ranks is None:
            self._merge_ranks = {pair: i for i, pair in enumerate(self.merges)}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def token_string(self, token_id: int) -> str:
        if not hasattr(self, "_inverse"):
            self._inverse = {i: s for s, i in self.vocab.items()}
        return self._inverse[token_id]

    def model_hash(self) -> str:
        return hashlib.sha256(dumps(self).encode("utf-8")).hexdigest()


def _word_symbols(word: str) -> list[str]:
    return [BOUNDARY] + list(word)


def _count_pairs(word_counts: dict[tuple, int]) -> dict[tuple[str, str], int]:
    pairs: dict[tuple[str, str], int] = {}
    for symbols, n in word_counts.items():
        for a, b in zip(symbols, symbols[1:]):
            pairs[(a, b)] = pairs.get((a, b), 0) + n
    return pairs


def _apply_merge(symbols: tuple, pair: tuple[str, str]) -> tuple:
    merged = pair[0] + pair[1]
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def train_vocab(corpus, vocab_size: int, lowercase: bool = False) -> TokenizerModel:
    """Greedy frequency-based pair merging until vocab_size is reached or no
    pair occurs at least twice. Ties break on lexicographic pair order.

    `corpus` is an iterable of sentences or anything with a .sentences().
    """
    corpus_sentences = corpus.sentences() if hasattr(corpus, "sentences") else corpus
    words: dict[str, int] = {}
    for sentence in corpus_sentences:
        if lowercase:
            sentence = sentence.lower()
        for w in sentence.split():
            words[w] = words.get(w, 0) + 1
    if not words:
        raise InputError("cannot train a tokenizer on an empty corpus")

    alphabet = sorted({s for w in words for s in _word_symbols(w)})
    if vocab_size < len(alphabet) + N_SPECIAL:
        raise InputError(
            f"vocab_size {vocab_size} below alphabet ({len(alphabet)}) + "
            f"{N_SPECIAL} special tokens"
        )

    word_counts: dict[tuple, int] = {tuple(_word_symbols(w)): n for w, n in words.items()}
    merges: list[tuple[str, str]] = []
    n_merges = vocab_size - len(alphabet) - N_SPECIAL
    for _ in range(n_merges):
        pairs = _count_pairs(word_counts)
        if not pairs:
            break
        best_count = max(pairs.values())
        if best_count < 2:
            break
        best = min(p for p, c in pairs.items() if c == best_count)
        merges.append(best)
        word_counts = {_apply_merge(sym, best): n for sym, n in word_counts.items()}

    vocab = {name: idx for name, idx in SPECIAL_TOKENS}
    for sym in alphabet:
        vocab[sym] = len(vocab)
    for a, b in merges:
        vocab[a + b] = len(vocab)
    return TokenizerModel(vocab=vocab, merges=merges, alphabet=alphabet, lowercase=lowercase)


def _encode_word(model: TokenizerModel, word: str) -> list[int]:
    symbols = []
    for s in _word_symbols(word):
        symbols.append(s if s in model.vocab or s == BOUNDARY else None)
    # apply merges in training order, cheapest-rank-first
    seq = [s if s is not None else "\0unk" for s in symbols]
    while len(seq) > 1:
        ranked = [
            (model._merge_ranks.get((a, b)), i)
            for i, (a, b) in enumerate(zip(seq, seq[1:]))
        ]
        ranked = [(r, i) for r, i in ranked if r is not None]
        if not ranked:
            break
        _, i = min(ranked)
        seq = seq[:i] + [seq[i] + seq[i + 1]] + seq[i + 2 :]
    return [model.vocab.get(s, UNK) for s in seq]


def encode(model: TokenizerModel, text: str) -> list[int]:
    """Token ids for text; characters outside the training alphabet become UNK."""
    if model.lowercase:
        text = text.lower()
    ids: list[int] = []
    for word in text.split():
        ids.extend(_encode_word(model, word))
    return ids


def decode(model: TokenizerModel, ids) -> str:
    """Inverse of encode up to whitespace normalization."""
    pieces = []
    for i in ids:
        i = int(i)
        if not 0 <= i < model.vocab_size:
            raise RangeError(f"token id {i} outside vocab of size {model.vocab_size}")
        s = model.token_string(i)
        pieces.append(s)
    text = "".join(pieces).replace(BOUNDARY, " ")
    return normalize_whitespace(text)


def dumps(model: TokenizerModel) -> str:
    lines = [f"{_FORMAT_HEADER} {model.vocab_size}"]
    lines.append(f"#lowercase {int(model.lowercase)}")
    lines.append("#alphabet")
    lines.extend(model.alphabet)
    lines.append("#merges")
    lines.extend(f"{a} {b}" for a, b in model.merges)
    lines.append("#specials")
    lines.extend(f"{name} {idx}" for name, idx in SPECIAL_TOKENS)
    return "\n".join(lines) + "\n"


def save(model: TokenizerModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(model))


def loads(text: str) -> TokenizerModel:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_FORMAT_HEADER + " "):
        raise LoadError("not a subword-v1 model file")
    try:
        declared = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise LoadError("malformed header") from exc
    idx = 1
    lowercase = False
    if idx < len(lines) and lines[idx].startswith("#lowercase"):
        lowercase = bool(int(lines[idx].split()[1]))
        idx += 1
    if idx >= len(lines) or lines[idx] != "#alphabet":
        raise LoadError("missing alphabet section")
    idx += 1
    alphabet = []
    while idx < len(lines) and lines[idx] != "#merges":
        alphabet.append(lines[idx])
        idx += 1
    if idx >= len(lines):
        raise LoadError("missing merges section")
    idx += 1
    merges = []
    while idx < len(lines) and lines[idx] != "#specials":
        a, b = lines[idx].split(" ", 1)
        merges.append((a, b))
        idx += 1
    if idx >= len(lines):
        raise LoadError("missing specials section")
    idx += 1
    specials = []
    while idx < len(lines) and lines[idx]:
        name, num = lines[idx].rsplit(" ", 1)
        specials.append((name, int(num)))
        idx += 1
    if tuple(specials) != SPECIAL_TOKENS:
        raise LoadError("special-token table does not match this build")
    vocab = {name: i for name, i in SPECIAL_TOKENS}
    for sym in alphabet:
        vocab[sym] = len(vocab)
    for a, b in merges:
        vocab[a + b] = len(vocab)
    if len(vocab) != declared:
        raise LoadError(f"vocab size mismatch: header {declared}, rebuilt {len(vocab)}")
    return TokenizerModel(vocab=vocab, merges=merges, alphabet=alphabet, lowercase=lowercase)


def load(path) -> TokenizerModel:
    with open(path, encoding="utf-8") as f:
        return loads(f.read())
