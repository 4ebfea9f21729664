"""Subword tokenizer: training determinism, round trips, model file format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sptk import subword
from sptk.errors import InputError, LoadError, RangeError
from sptk.subword import decode, encode, train_vocab

CORPUS = [
    "the cat sat on the mat.",
    "the dog ran over the hill!",
    "a cat and a dog met near the mat?",
    "dogs and cats are friends.",
    "the hill had a mat on it.",
]


@pytest.fixture(scope="module")
def model():
    return train_vocab(CORPUS, vocab_size=90)


class TestTraining:
    def test_merge_order_on_repeated_word(self):
        # "aaaa aaaa": first merge pairs characters, second merges the pairs
        m = train_vocab(["aaaa aaaa"], vocab_size=2 + subword.N_SPECIAL + 2)
        assert m.merges == [("a", "a"), ("aa", "aa")]
        assert "aa" in m.vocab and "aaaa" in m.vocab

    def test_vocab_size_too_small(self):
        with pytest.raises(InputError):
            train_vocab(["abc"], vocab_size=3)

    def test_empty_corpus(self):
        with pytest.raises(InputError):
            train_vocab(["   ", ""], vocab_size=50)

    def test_retraining_is_deterministic(self):
        a = train_vocab(CORPUS, vocab_size=80)
        b = train_vocab(CORPUS, vocab_size=80)
        assert a.model_hash() == b.model_hash()

    def test_ids_dense_and_specials_fixed(self, model):
        ids = sorted(model.vocab.values())
        assert ids == list(range(model.vocab_size))
        assert model.vocab["[PAD]"] == 0
        assert model.vocab["[MASK]"] == 4


class TestEncodeDecode:
    def test_round_trip_all_training_sentences(self, model):
        for s in CORPUS:
            assert decode(model, encode(model, s)) == subword.normalize_whitespace(s)

    def test_round_trip_messy_whitespace(self, model):
        text = "  the   cat\tsat \n on the mat.  "
        assert decode(model, encode(model, text)) == "the cat sat on the mat."

    def test_empty_text(self, model):
        assert encode(model, "") == []
        assert decode(model, []) == ""

    def test_unseen_character_yields_single_unk(self, model):
        ids = encode(model, "the cat~dog")
        assert ids.count(subword.UNK) == 1
        # everything around the unknown character still decodes
        assert "the cat" in decode(model, ids)

    def test_decode_out_of_range(self, model):
        with pytest.raises(RangeError):
            decode(model, [model.vocab_size])

    @given(st.lists(st.sampled_from("the cat dog mat hill ran sat a and on".split()),
                    min_size=0, max_size=12))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_property_over_known_words(self, words):
        m = train_vocab(CORPUS, vocab_size=90)
        text = " ".join(words)
        assert decode(m, encode(m, text)) == subword.normalize_whitespace(text)


class TestCompression:
    def test_tokens_per_word_decreases_with_vocab(self):
        rng = np.random.default_rng(0)
        syllables = ["ba", "ko", "ri", "mu", "ta", "zen", "lo", "pi"]
        vocab_words = sorted({
            "".join(rng.choice(syllables, size=rng.integers(2, 4)))
            for _ in range(400)
        })
        sentences = [
            " ".join(rng.choice(vocab_words, size=10)) for _ in range(400)
        ]
        ratios = []
        for size in (30, 90, 250):
            m = train_vocab(sentences, vocab_size=size)
            total_tokens = sum(len(encode(m, s)) for s in sentences)
            total_words = sum(len(s.split()) for s in sentences)
            ratios.append(total_tokens / total_words)
        assert ratios[0] > ratios[1] > ratios[2]


class TestModelFile:
    def test_save_load_bit_exact(self, model, tmp_path):
        p = tmp_path / "tok.model"
        subword.save(model, p)
        reloaded = subword.load(p)
        p2 = tmp_path / "tok2.model"
        subword.save(reloaded, p2)
        assert p.read_bytes() == p2.read_bytes()
        assert reloaded.vocab == model.vocab
        assert reloaded.merges == model.merges

    def test_header_line_format(self, model, tmp_path):
        p = tmp_path / "tok.model"
        subword.save(model, p)
        first = p.read_text(encoding="utf-8").splitlines()[0]
        assert first == f"subword-v1 {model.vocab_size}"

    def test_load_rejects_garbage(self, tmp_path):
        p = tmp_path / "bad.model"
        p.write_text("not a model\n")
        with pytest.raises(LoadError):
            subword.load(p)

    def test_load_rejects_truncation(self, model, tmp_path):
        p = tmp_path / "tok.model"
        subword.save(model, p)
        text = p.read_text(encoding="utf-8")
        p.write_text(text[: len(text) // 2].rsplit("\n", 1)[0])
        with pytest.raises(LoadError):
            subword.load(p)
