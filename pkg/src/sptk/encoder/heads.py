"""Task heads over encoder hidden states.

Classification-style heads read the CLS position through one hidden layer
(dense + GELU) before the output projection; token and span heads act per
position.
"""

from __future__ import annotations

import numpy as np

from sptk import numcore as nc
from sptk.errors import ConfigError
from sptk.numcore import Tensor
from sptk.encoder.model import Encoder, _init_params
from sptk.subword import CLS, SEP


def encode_pair_ids(tokens_a: list[int], tokens_b: list[int] | None,
                    max_len: int) -> list[int]:
    """CLS a SEP [b SEP], truncating the longer tail to fit max_len."""
    if tokens_b:
        budget = max_len - 3
        if len(tokens_a) + len(tokens_b) > budget:
            # trim the longer sequence first, one token at a time
            a, b = list(tokens_a), list(tokens_b)
            while len(a) + len(b) > budget:
                if len(a) >= len(b):
                    a.pop()
                else:
                    b.pop()
            tokens_a, tokens_b = a, b
        return [CLS] + list(tokens_a) + [SEP] + list(tokens_b) + [SEP]
    tokens_a = list(tokens_a)[: max_len - 2]
    return [CLS] + tokens_a + [SEP]


def _cls_vector(encoder: Encoder, ids, mask, dropout_rng=None) -> Tensor:
    hidden = encoder.forward(ids, mask, dropout_rng=dropout_rng)
    b, t, h = hidden.data.shape
    return nc.gather_rows(nc.reshape(hidden, (b * t, h)), np.arange(b) * t)


class ClsHead:
    """dense(H -> H) + GELU + dense(H -> out_dim) over the CLS vector."""

    def __init__(self, hidden: int, out_dim: int, seed: int):
        if out_dim < 1:
            raise ConfigError("head output dimension must be positive")
        rng = np.random.default_rng(seed)
        self.params = _init_params(
            {
                "head.dense_w": (hidden, hidden),
                "head.dense_b": (hidden,),
                "head.out_w": (hidden, out_dim),
                "head.out_b": (out_dim,),
            },
            rng,
        )
        self.out_dim = out_dim

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def logits(self, encoder: Encoder, ids, mask, dropout_rng=None) -> Tensor:
        cls = _cls_vector(encoder, ids, mask, dropout_rng=dropout_rng)
        mid = nc.gelu(nc.add(nc.matmul(cls, self.params["head.dense_w"]),
                             self.params["head.dense_b"]))
        return nc.add(nc.matmul(mid, self.params["head.out_w"]),
                      self.params["head.out_b"])


def classify_logits(encoder: Encoder, head: ClsHead, ids, mask,
                    dropout_rng=None) -> Tensor:
    """(B, classes) logits; classes >= 2 enforced at head construction."""
    if head.out_dim < 2:
        raise ConfigError("classification needs at least 2 classes")
    return head.logits(encoder, ids, mask, dropout_rng=dropout_rng)


class TokenHead:
    """Per-position dense(H -> H) + GELU + dense(H -> tags)."""

    def __init__(self, hidden: int, n_tags: int, seed: int):
        if n_tags < 1:
            raise ConfigError("token head needs at least one tag")
        rng = np.random.default_rng(seed)
        self.params = _init_params(
            {
                "head.dense_w": (hidden, hidden),
                "head.dense_b": (hidden,),
                "head.out_w": (hidden, n_tags),
                "head.out_b": (n_tags,),
            },
            rng,
        )
        self.n_tags = n_tags

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def logits(self, encoder: Encoder, ids, mask, dropout_rng=None) -> Tensor:
        hidden = encoder.forward(ids, mask, dropout_rng=dropout_rng)
        b, t, h = hidden.data.shape
        flat = nc.reshape(hidden, (b * t, h))
        mid = nc.gelu(nc.add(nc.matmul(flat, self.params["head.dense_w"]),
                             self.params["head.dense_b"]))
        out = nc.add(nc.matmul(mid, self.params["head.out_w"]),
                     self.params["head.out_b"])
        return nc.reshape(out, (b, t, self.n_tags))


class SpanHead:
    """Per-position start/end logits: dense(H -> 2)."""

    def __init__(self, hidden: int, seed: int):
        rng = np.random.default_rng(seed)
        self.params = _init_params(
            {"head.span_w": (hidden, 2), "head.span_b": (2,)}, rng
        )

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def logits(self, encoder: Encoder, ids, mask, dropout_rng=None) -> tuple[Tensor, Tensor]:
        hidden = encoder.forward(ids, mask, dropout_rng=dropout_rng)
        b, t, h = hidden.data.shape
        flat = nc.reshape(hidden, (b * t, h))
        out = nc.add(nc.matmul(flat, self.params["head.span_w"]),
                     self.params["head.span_b"])
        out = nc.reshape(out, (b, t, 2))
        start = nc.reshape(nc.gather_rows(nc.reshape(nc.transpose(out, (2, 0, 1)),
                                                     (2, b * t)), [0]), (b, t))
        end = nc.reshape(nc.gather_rows(nc.reshape(nc.transpose(out, (2, 0, 1)),
                                                   (2, b * t)), [1]), (b, t))
        return start, end


def decode_span(start_logits: np.ndarray, end_logits: np.ndarray,
                valid: np.ndarray, max_window: int = 30) -> tuple[int, int]:
    """Best (start, end) with start <= end <= start + max_window, both valid,
    maximizing start+end score. Falls back to the best single valid token.
    """
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return 0, 0
    best = None
    for s in idx:
        lo, hi = s, min(s + max_window, len(valid) - 1)
        window = [e for e in range(lo, hi + 1) if valid[e]]
        if not window:
            continue
        e = max(window, key=lambda e: end_logits[e])
        score = start_logits[s] + end_logits[e]
        if best is None or score > best[0]:
            best = (score, s, e)
    if best is None:
        j = idx[np.argmax(start_logits[idx] + end_logits[idx])]
        return int(j), int(j)
    return int(best[1]), int(best[2])


def multichoice_scores(encoder: Encoder, head: ClsHead, ending_batches,
                       dropout_rng=None) -> Tensor:
    """Each ending encoded separately; CLS trunk scores stacked to (B, K)."""
    cols = []
    for ids, mask in ending_batches:
        cols.append(head.logits(encoder, ids, mask, dropout_rng=dropout_rng))
    return nc.concat(cols, axis=1)
