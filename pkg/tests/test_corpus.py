"""Corpus construction: ordering strategies, TF-IDF reorder, carving, packing."""

import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sptk import subword
from sptk.errors import ConfigError, InputError
from sptk.corpus import (
    LabeledDataset,
    PretrainCorpus,
    Record,
    build_corpus,
    carve_validation,
    cosine,
    load_corpus,
    load_dataset,
    mean_adjacent_similarity,
    original_adjacency,
    pack_sequences,
    save_corpus,
    sentence_split,
    size_matched_sample,
    split_halves,
    tfidf_reorder,
    tfidf_vectors,
    unpack_stream,
    write_dataset,
)


def make_dataset(texts, name="toy"):
    records = [Record(id=f"r{i}", text_a=t, label=i % 2) for i, t in enumerate(texts)]
    return LabeledDataset(name=name, task_type="multiclass", n_classes=2, train=records)


class TestSentenceSplit:
    def test_basic(self):
        assert sentence_split("A. B? C") == ["A.", "B?", "C"]

    def test_no_terminator(self):
        assert sentence_split("no terminator") == ["no terminator"]

    def test_terminator_without_space_not_boundary(self):
        assert sentence_split("v1.2 shipped. done") == ["v1.2 shipped.", "done"]

    def test_never_empty(self):
        assert sentence_split("") == []
        assert sentence_split("   ") == []
        assert all(sentence_split("Hi!  Bye."))

    @given(st.text(alphabet="abc .!?xyz\n\t", max_size=80))
    @settings(max_examples=100, deadline=None)
    def test_join_reproduces_normalized_text(self, text):
        joined = " ".join(sentence_split(text))
        assert joined == subword.normalize_whitespace(text)


class TestBuildCorpus:
    def test_standard_preserves_within_example_order(self):
        ds = make_dataset(["One. Two. Three.", "Red! Green! Blue!"])
        out = build_corpus(ds, "standard", seed=3)
        assert sorted(map(tuple, out.documents)) == sorted(
            [("One.", "Two.", "Three."), ("Red!", "Green!", "Blue!")]
        )

    def test_sentence_multiset_conserved_all_strategies(self):
        ds = make_dataset(
            ["Alpha beta. Gamma delta.", "Epsilon zeta! Eta theta?", "Iota kappa."]
        )
        source = Counter(
            s for r in ds.train for s in sentence_split(r.text_a)
        )
        for strategy in ("standard", "shuffled", "tfidf"):
            out = build_corpus(ds, strategy, seed=11)
            assert Counter(out.sentences()) == source
            assert out.strategy == strategy

    def test_shuffled_varies_across_seeds(self):
        ds = make_dataset([f"Word{i} one. Word{i} two." for i in range(10)])
        orders = {tuple(build_corpus(ds, "shuffled", seed=s).sentences()) for s in range(20)}
        assert len(orders) > 15

    def test_deterministic_per_seed(self):
        ds = make_dataset([f"Item {i} alpha. Item {i} beta." for i in range(8)])
        a = build_corpus(ds, "shuffled", seed=5)
        b = build_corpus(ds, "shuffled", seed=5)
        assert a.sentences() == b.sentences()
        assert a.fingerprint() == b.fingerprint()

    def test_empty_train_rejected(self):
        ds = LabeledDataset(name="e", task_type="multiclass", n_classes=2)
        with pytest.raises(InputError):
            build_corpus(ds, "standard", seed=0)

    def test_unknown_strategy(self):
        ds = make_dataset(["Hello there."])
        with pytest.raises(ConfigError):
            build_corpus(ds, "sorted", seed=0)


class TestTfidf:
    def test_identical_sentences_similarity_one(self):
        v = tfidf_vectors(["cat sat", "cat sat"])
        assert cosine(v[0], v[1]) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_similarity_zero(self):
        v = tfidf_vectors(["cat sat", "dog ran"])
        assert cosine(v[0], v[1]) == 0.0

    def test_hand_computed_three_sentence_fixture(self):
        # sentences: "a b", "b c", "c d"; N=3
        # df: a=1, b=2, c=2, d=1
        v = tfidf_vectors(["a b", "b c", "c d"])
        idf1 = math.log(4 / 2) + 1.0  # df=1
        idf2 = math.log(4 / 3) + 1.0  # df=2
        n0 = math.sqrt(idf1 ** 2 + idf2 ** 2)
        assert v[0]["a"] == pytest.approx(idf1 / n0, abs=1e-9)
        assert v[0]["b"] == pytest.approx(idf2 / n0, abs=1e-9)
        # cos(v0, v1) = (idf2/n0) * (idf2/n1) with n1 = sqrt(2)*idf2
        n1 = math.sqrt(2) * idf2
        assert cosine(v[0], v[1]) == pytest.approx(idf2 * idf2 / (n0 * n1), abs=1e-9)

    def test_topic_grouping_matches_bruteforce(self):
        sentences = ["cat sat", "dog ran", "cat ate", "dog dug"]
        order, waivers = tfidf_reorder(sentences, set(), seed=0)
        assert sorted(order) == [0, 1, 2, 3]
        assert waivers == 0
        # the two cat sentences and the two dog sentences end up adjacent
        topics = ["cat" if "cat" in sentences[i] else "dog" for i in order]
        assert topics in (["cat", "cat", "dog", "dog"], ["dog", "dog", "cat", "cat"])
        # brute force: the greedy chain attains the best mean adjacent similarity
        best = max(
            mean_adjacent_similarity(sentences, list(p))
            for p in itertools.permutations(range(4))
        )
        assert mean_adjacent_similarity(sentences, order) == pytest.approx(best, abs=1e-12)

    def test_two_adjacent_sentences_trigger_waiver(self):
        sentences = ["alpha beta", "alpha gamma"]
        adjacency = {(0, 1), (1, 0)}
        order, waivers = tfidf_reorder(sentences, adjacency, seed=1)
        assert sorted(order) == [0, 1]
        assert waivers == 1

    def test_adjacency_exclusion_respected_without_waiver(self):
        # chain never places an originally adjacent pair next to each other
        rng = np.random.default_rng(7)
        words = [f"t{i}" for i in range(12)]
        docs = [[f"{words[i]} {words[i+1]}", f"{words[i+1]} {words[i+2]}"]
                for i in range(0, 9, 3)]
        pool = [s for d in docs for s in d]
        adjacency = original_adjacency(docs)
        order, waivers = tfidf_reorder(pool, adjacency, seed=3)
        if waivers == 0:
            for a, b in zip(order, order[1:]):
                assert (a, b) not in adjacency

    def test_greedy_beats_random_on_synthetic_corpora(self):
        wins = 0
        for seed in range(40):
            rng = np.random.default_rng(seed)
            n_topics = int(rng.integers(2, 6))
            topics = [[f"w{t}{k}" for k in range(6)] for t in range(n_topics)]
            sentences = []
            for _ in range(int(rng.integers(20, 51))):
                t = int(rng.integers(n_topics))
                words = rng.choice(topics[t], size=5)
                sentences.append(" ".join(words))
            order, _ = tfidf_reorder(sentences, set(), seed=seed)
            greedy = mean_adjacent_similarity(sentences, order)
            shuffled = list(rng.permutation(len(sentences)))
            rand = mean_adjacent_similarity(sentences, shuffled)
            if greedy >= rand:
                wins += 1
        assert wins >= 38


class TestSplits:
    def test_even_split(self):
        ds = make_dataset([f"Text number {i}." for i in range(10)])
        a, b = split_halves(ds, seed=0)
        assert len(a.train) == 5 and len(b.train) == 5
        assert {r.id for r in a.train}.isdisjoint({r.id for r in b.train})
        assert {r.id for r in a.train} | {r.id for r in b.train} == {
            r.id for r in ds.train
        }

    def test_odd_split(self):
        ds = make_dataset([f"Text number {i}." for i in range(11)])
        a, b = split_halves(ds, seed=0)
        assert (len(a.train), len(b.train)) == (6, 5)

    def test_split_deterministic(self):
        ds = make_dataset([f"Text number {i}." for i in range(9)])
        a1, _ = split_halves(ds, seed=4)
        a2, _ = split_halves(ds, seed=4)
        assert [r.id for r in a1.train] == [r.id for r in a2.train]

    def test_split_too_small(self):
        ds = make_dataset(["Only one."])
        with pytest.raises(InputError):
            split_halves(ds, seed=0)

    def test_carve_validation_counts(self):
        ds = make_dataset([f"Number {i} text." for i in range(100)])
        out = carve_validation(ds, 40, seed=1)
        assert len(out.train) == 60 and len(out.validation) == 40
        assert {r.id for r in out.train}.isdisjoint({r.id for r in out.validation})

    def test_carve_rejects_zero_and_too_many(self):
        ds = make_dataset([f"Number {i} text." for i in range(5)])
        with pytest.raises(InputError):
            carve_validation(ds, 0)
        with pytest.raises(InputError):
            carve_validation(ds, 5)

    def test_validation_promoted_to_test(self):
        recs = [Record(id=f"t{i}", text_a=f"Body {i}.", label=0) for i in range(20)]
        val = [Record(id=f"v{i}", text_a=f"Val {i}.", label=0) for i in range(4)]
        ds = LabeledDataset(name="d", task_type="multiclass", n_classes=2,
                            train=recs, validation=val)
        out = carve_validation(ds, 5, seed=0)
        assert [r.id for r in out.test] == [r.id for r in val]
        assert len(out.validation) == 5
        assert all(r.id.startswith("t") for r in out.validation)


class TestSizeMatchedSample:
    def _external(self, n_docs=200, seed=0):
        rng = np.random.default_rng(seed)
        docs = [
            [f"Document {i} sentence {j} filler filler." for j in range(int(rng.integers(2, 6)))]
            for i in range(n_docs)
        ]
        return PretrainCorpus(documents=docs, strategy="standard", seed=0)

    def test_full_corpus_target(self):
        ext = self._external(20)
        target = ext.total_bytes()
        out = size_matched_sample(ext, target, seed=0)
        assert out.total_bytes() == pytest.approx(target, rel=0.01)
        assert len(out.sentences()) == len(ext.sentences())

    def test_small_target_within_band(self):
        ext = self._external(300)
        total = ext.total_bytes()
        assert total > 20000
        out = size_matched_sample(ext, 1000, seed=3)
        assert 990 <= out.total_bytes() <= 1010

    def test_two_seeds_differ(self):
        ext = self._external(300)
        a = size_matched_sample(ext, 2000, seed=1)
        b = size_matched_sample(ext, 2000, seed=2)
        assert a.sentences() != b.sentences()

    def test_too_small_corpus_rejected(self):
        ext = self._external(3)
        with pytest.raises(InputError):
            size_matched_sample(ext, ext.total_bytes() * 10, seed=0)


@pytest.fixture(scope="module")
def tokenizer():
    sents = [f"pack token {i} word." for i in range(30)]
    return subword.train_vocab(sents, vocab_size=120)


class TestPacking:

    def test_row_count_is_ceil(self, tokenizer):
        docs = [[f"pack token {i} word."] for i in range(12)]
        c = PretrainCorpus(documents=docs, strategy="standard", seed=0)
        batch = pack_sequences(c, tokenizer, seq_len=16)
        stream = unpack_stream(batch)
        assert batch.n_rows == (len(stream) + 15) // 16

    def test_round_trip_token_stream(self, tokenizer):
        docs = [[f"pack token {i} word."] for i in range(7)]
        c = PretrainCorpus(documents=docs, strategy="standard", seed=0)
        batch = pack_sequences(c, tokenizer, seq_len=16)
        expected = []
        for doc in docs:
            expected.append(subword.CLS)
            expected.extend(subword.encode(tokenizer, " ".join(doc)))
            expected.append(subword.SEP)
        assert unpack_stream(batch) == expected

    def test_long_document_spans_rows(self, tokenizer):
        # grow the document until CLS + tokens + SEP lands around 300 tokens
        chunks = []
        i = 0
        while len(subword.encode(tokenizer, " ".join(chunks))) + 2 < 290:
            chunks.append(f"pack token {i % 30} word.")
            i += 1
        text = " ".join(chunks)
        n_tokens = len(subword.encode(tokenizer, text)) + 2
        c = PretrainCorpus(documents=[[text]], strategy="standard", seed=0)
        batch = pack_sequences(c, tokenizer, seq_len=128)
        assert batch.n_rows == (n_tokens + 127) // 128
        assert batch.n_rows >= 3
        assert batch.doc_start[0, 0]
        assert batch.doc_start.sum() == 1

    def test_pad_only_after_last_real_token(self, tokenizer):
        docs = [["pack token 1 word."]]
        c = PretrainCorpus(documents=docs, strategy="standard", seed=0)
        batch = pack_sequences(c, tokenizer, seq_len=32)
        row, mask = batch.tokens[0], batch.mask[0]
        n_real = int(mask.sum())
        assert np.all(row[n_real:] == subword.PAD)
        assert np.all(mask[:n_real] == 1)

    def test_short_seq_len_rejected(self, tokenizer):
        c = PretrainCorpus(documents=[["Hi."]], strategy="standard", seed=0)
        with pytest.raises(ConfigError):
            pack_sequences(c, tokenizer, seq_len=4)


class TestPersistence:
    def test_dataset_round_trip(self, tmp_path):
        ds = make_dataset([f"Round trip {i}. Second {i}." for i in range(6)])
        ds.validation = [Record(id="v0", text_a="Validation text.", label=1)]
        write_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.fingerprint() == ds.fingerprint()

    def test_corpus_file_round_trip(self, tmp_path):
        ds = make_dataset(["First one. Second one.", "Third line! Fourth line?"])
        c = build_corpus(ds, "standard", seed=9)
        p = tmp_path / "corpus.txt"
        save_corpus(c, p)
        header = p.read_text(encoding="utf-8").splitlines()[0]
        assert header == "# strategy=standard seed=9"
        back = load_corpus(p)
        assert back.documents == c.documents

    def test_missing_dataset_errors(self, tmp_path):
        with pytest.raises(InputError):
            load_dataset(tmp_path / "nope")
