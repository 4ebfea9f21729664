"""Turning labeled records into model inputs for the six task families."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sptk import subword
from sptk.corpus import LabeledDataset, Record
from sptk.errors import ConfigError, InputError
from sptk.subword import CLS, PAD, SEP, TokenizerModel
from sptk.encoder.heads import encode_pair_ids


@dataclass
class EncodedExample:
    id: str
    ids: object                 # (T,) int array, or list of arrays (multichoice)
    target: object
    words: list | None = None   # token task: the word sequence
    word_starts: list | None = None
    context_words: list | None = None  # span task bookkeeping
    token_word: dict | None = None     # token index -> context word index
    gold_answers: list | None = None
    gold_tags: list | None = None


class TaskCodec:
    """Encodes records for one dataset/task and assembles padded batches."""

    def __init__(self, dataset: LabeledDataset, tokenizer: TokenizerModel,
                 max_len: int):
        self.task = dataset.task_type
        self.tokenizer = tokenizer
        self.max_len = max_len
        self.n_classes = dataset.n_classes
        if self.task == "token":
            tags = sorted({
                t for rec in dataset.train for t in (rec.tags or [])
            })
            if not tags:
                raise InputError("token task has no tags in the train split")
            self.tag_vocab = {t: i for i, t in enumerate(tags)}
            self.tag_names = tags

    def _enc(self, text: str) -> list[int]:
        return subword.encode(self.tokenizer, text)

    def encode_record(self, rec: Record) -> EncodedExample:
        task = self.task
        if task in ("multiclass", "multilabel", "regression"):
            ids = encode_pair_ids(
                self._enc(rec.text_a),
                self._enc(rec.text_b) if rec.text_b else None,
                self.max_len,
            )
            if task == "multiclass":
                target = int(rec.label)
            elif task == "multilabel":
                target = np.asarray(rec.label, dtype=np.float32)
            else:
                target = float(rec.label)
            return EncodedExample(rec.id, np.asarray(ids, dtype=np.int64), target)
        if task == "token":
            return self._encode_token(rec)
        if task == "span":
            return self._encode_span(rec)
        if task == "multichoice":
            return self._encode_multichoice(rec)
        raise ConfigError(f"unsupported task {task!r}")

    def _encode_token(self, rec: Record) -> EncodedExample:
        words = rec.tokens or rec.text_a.split()
        tags = rec.tags
        if tags is None or len(tags) != len(words):
            raise InputError(f"record {rec.id}: tags do not align with tokens")
        ids = [CLS]
        word_starts = []
        kept_words = 0
        for w in words:
            piece = self._enc(w)
            if len(ids) + len(piece) + 1 > self.max_len:
                break
            word_starts.append(len(ids))
            ids.extend(piece)
            kept_words += 1
        ids.append(SEP)
        target = np.full(len(ids), -1, dtype=np.int64)
        for wi in range(kept_words):
            target[word_starts[wi]] = self.tag_vocab.get(tags[wi], 0)
        return EncodedExample(
            rec.id, np.asarray(ids, dtype=np.int64), target,
            words=words[:kept_words], word_starts=word_starts,
            gold_tags=list(tags[:kept_words]),
        )

    def _encode_span(self, rec: Record) -> EncodedExample:
        if not rec.context or not rec.question or not rec.answers:
            raise InputError(f"record {rec.id}: span task needs context/question/answers")
        q_ids = self._enc(rec.question)
        ctx_words = rec.context.split()
        ids = [CLS] + q_ids[: self.max_len // 2] + [SEP]
        token_word = {}
        word_starts = []
        kept = 0
        for wi, w in enumerate(ctx_words):
            piece = self._enc(w)
            if len(ids) + len(piece) + 1 > self.max_len:
                break
            word_starts.append(len(ids))
            for tok in piece:
                token_word[len(ids)] = wi
                ids.append(tok)
            kept += 1
        ids.append(SEP)
        start_t, end_t = self._answer_token_span(
            rec.answers, ctx_words[:kept], word_starts, token_word, len(ids)
        )
        return EncodedExample(
            rec.id, np.asarray(ids, dtype=np.int64), (start_t, end_t),
            context_words=ctx_words[:kept], word_starts=word_starts,
            token_word=token_word, gold_answers=list(rec.answers),
        )

    def _answer_token_span(self, answers, ctx_words, word_starts, token_word,
                           total_len):
        """First word-level occurrence of the first findable answer."""
        lowered = [w.lower() for w in ctx_words]
        for ans in answers:
            ans_words = ans.lower().split()
            if not ans_words:
                continue
            for wi in range(len(lowered) - len(ans_words) + 1):
                if lowered[wi : wi + len(ans_words)] == ans_words:
                    start_t = word_starts[wi]
                    last_word = wi + len(ans_words) - 1
                    if last_word + 1 < len(word_starts):
                        end_t = word_starts[last_word + 1] - 1
                    else:
                        end_t = total_len - 2  # last context token before SEP
                    return start_t, end_t
        # unanswerable within the kept window: point at the first context token
        return word_starts[0] if word_starts else 1, word_starts[0] if word_starts else 1

    def _encode_multichoice(self, rec: Record) -> EncodedExample:
        if not rec.endings or len(rec.endings) < 2:
            raise InputError(f"record {rec.id}: multichoice needs >= 2 endings")
        ctx = self._enc(rec.text_a)
        variants = [
            np.asarray(encode_pair_ids(ctx, self._enc(e), self.max_len),
                       dtype=np.int64)
            for e in rec.endings
        ]
        return EncodedExample(rec.id, variants, int(rec.label))

    # ------------------------------------------------------------------

    def pad_batch(self, seqs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        t = max(len(s) for s in seqs)
        ids = np.full((len(seqs), t), PAD, dtype=np.int64)
        mask = np.zeros((len(seqs), t), dtype=np.uint8)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
            mask[i, : len(s)] = 1
        return ids, mask

    def batches(self, examples: list[EncodedExample], batch_size: int,
                rng: np.random.Generator | None = None):
        order = np.arange(len(examples))
        if rng is not None:
            order = rng.permutation(len(examples))
        for lo in range(0, len(examples), batch_size):
            yield [examples[i] for i in order[lo : lo + batch_size]]
