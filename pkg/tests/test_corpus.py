import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bali.corpus import (
    CLS_ID,
    MASK_ID,
    SEP_ID,
    UNK_ID,
    AnnotatedSentence,
    Vocabulary,
    balanced_sample,
    build_vocab,
    decode,
    encode,
    load_corpus,
)
from bali.errors import ValidationError
from conftest import jsonl


class TestLoadCorpus:
    def test_valid_record(self):
        out = load_corpus(jsonl([
            {"tokens": ["aspirin", "treats", "pain"], "mentions": [[0, 1, "A"], [2, 3, "B"]]},
        ]))
        assert len(out) == 1 and len(out[0].mentions) == 2

    def test_empty_span_rejected_with_index(self):
        with pytest.raises(ValidationError, match="record 1"):
            load_corpus(jsonl([{"tokens": ["a", "b"], "mentions": [[2, 2, "B"]]}]))

    def test_overlap_rejected(self):
        with pytest.raises(ValidationError, match="overlap"):
            load_corpus(jsonl([
                {"tokens": ["a", "b", "c"], "mentions": [[0, 2, "A"], [1, 3, "B"]]},
            ]))

    def test_span_out_of_range(self):
        with pytest.raises(ValidationError):
            load_corpus(jsonl([{"tokens": ["a"], "mentions": [[0, 2, "A"]]}]))


class TestVocabulary:
    def test_specials_at_reserved_ids(self, toy_vocab):
        assert toy_vocab.tokens[:5] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]

    def test_special_literal_in_text_maps_to_unk(self, toy_vocab):
        assert toy_vocab.encode_token("[MASK]") == UNK_ID
        assert toy_vocab.encode_token("[mask]") == UNK_ID
        assert toy_vocab.encode_token("[CLS]") == UNK_ID

    def test_round_trip_from_token_list(self, toy_vocab):
        rebuilt = Vocabulary.from_token_list(list(toy_vocab.tokens))
        assert rebuilt.tokens == toy_vocab.tokens

    def test_bad_token_list(self):
        with pytest.raises(ValidationError):
            Vocabulary.from_token_list(["[PAD]", "[UNK]", "a", "b", "c"])


class TestBuildVocab:
    def corpus_of(self, *sentences):
        return [AnnotatedSentence(tuple(s.split()), ()) for s in sentences]

    def test_frequency_filter(self):
        vocab = build_vocab(self.corpus_of("a b", "a c"), None, min_freq=2)
        assert vocab.tokens[5:] == ["a"]

    def test_order_frequency_then_lexicographic(self):
        vocab = build_vocab(self.corpus_of("a b", "a c"), None, min_freq=1)
        assert vocab.tokens[5:] == ["a", "b", "c"]
        assert [vocab.encode_token(t) for t in ("a", "b", "c")] == [5, 6, 7]

    def test_includes_kg_synonym_and_relation_tokens(self, toy_kg):
        vocab = build_vocab(self.corpus_of("filler words"), toy_kg, min_freq=1)
        for tok in ("acetylsalicylic", "influenza", "causes"):
            assert tok in vocab

    def test_lowercases(self):
        vocab = build_vocab(self.corpus_of("Aspirin ASPIRIN"), None, min_freq=2)
        assert "aspirin" in vocab

    def test_empty_corpus_errors(self):
        with pytest.raises(ValidationError):
            build_vocab([], None, min_freq=1)

    def test_special_literals_never_enter_vocab(self):
        vocab = build_vocab(self.corpus_of("[MASK] [mask] word"), None, min_freq=1)
        assert vocab.tokens[5:] == ["word"]


class TestEncode:
    def test_cls_offset(self, toy_vocab):
        sent = AnnotatedSentence(("aspirin", "treats", "pain"), ((0, 1, "A"),))
        ids, mentions = encode(sent, toy_vocab, max_len=8)
        assert ids[0] == CLS_ID and ids[-1] == SEP_ID and len(ids) == 5
        assert mentions == [(1, 2, "A")]

    def test_truncation_drops_cut_mentions(self, toy_vocab):
        sent = AnnotatedSentence(("aspirin", "treats", "pain"), ((2, 3, "B"),))
        ids, mentions = encode(sent, toy_vocab, max_len=4)
        assert len(ids) == 4  # CLS + 2 body + SEP
        assert mentions == []

    def test_all_oov_become_unk(self, toy_vocab):
        sent = AnnotatedSentence(("zzz", "qqq"), ())
        ids, _ = encode(sent, toy_vocab, max_len=8)
        assert ids[1:-1] == [UNK_ID, UNK_ID]

    def test_max_len_minimum(self, toy_vocab):
        with pytest.raises(ValueError):
            encode(AnnotatedSentence(("a",), ()), toy_vocab, max_len=2)

    def test_round_trip_restores_lowercased_body(self, toy_vocab):
        sent = AnnotatedSentence(("Aspirin", "treats", "PAIN"), ())
        ids, _ = encode(sent, toy_vocab, max_len=16)
        assert decode(ids, toy_vocab) == ["aspirin", "treats", "pain"]

    def test_mention_spans_index_only_body(self, toy_corpus, toy_vocab):
        for sent in toy_corpus:
            ids, mentions = encode(sent, toy_vocab, max_len=16)
            for start, end, _ in mentions:
                assert 1 <= start < end <= len(ids) - 1
                for pos in range(start, end):
                    assert ids[pos] not in (CLS_ID, SEP_ID)


class TestBalancedSample:
    def single_mention_corpus(self, concept_counts):
        corpus = []
        for cid, n in concept_counts.items():
            for _ in range(n):
                corpus.append(AnnotatedSentence(("w",), ((0, 1, cid),)))
        return corpus

    def test_below_cap_keeps_all(self):
        corpus = self.single_mention_corpus({"A": 3})
        assert len(balanced_sample(corpus, 10, random.Random(0))) == 3

    def test_cap_enforced(self):
        corpus = self.single_mention_corpus({"A": 15})
        assert len(balanced_sample(corpus, 10, random.Random(0))) == 10

    def test_shared_sentence_outcomes_pinned(self):
        # s0 mentions A and B, s1 only A, s2 only B; cap 1
        corpus = [
            AnnotatedSentence(("w", "v"), ((0, 1, "A"), (1, 2, "B"))),
            AnnotatedSentence(("w",), ((0, 1, "A"),)),
            AnnotatedSentence(("v",), ((0, 1, "B"),)),
        ]
        picks = {
            seed: tuple(
                corpus.index(s) for s in balanced_sample(corpus, 1, random.Random(seed))
            )
            for seed in (0, 6)
        }
        # golden, frozen from enumerating the seeded procedure: seed 0 selects
        # two sentences, seed 6 lets the shared sentence satisfy both concepts
        assert picks[0] == (0, 2)
        assert picks[6] == (0,)

    def test_deterministic(self):
        corpus = self.single_mention_corpus({"A": 9, "B": 7, "C": 4})
        a = balanced_sample(corpus, 3, random.Random(42))
        b = balanced_sample(corpus, 3, random.Random(42))
        assert [id(s) for s in a] == [id(s) for s in b]

    @settings(max_examples=40, deadline=None)
    @given(
        counts=st.dictionaries(
            st.sampled_from(["A", "B", "C", "D"]),
            st.integers(min_value=1, max_value=12),
            min_size=1,
        ),
        cap=st.integers(min_value=1, max_value=10),
        seed=st.integers(min_value=0, max_value=999),
    )
    def test_monotone_in_cap(self, counts, cap, seed):
        corpus = self.single_mention_corpus(counts)
        small = balanced_sample(corpus, cap, random.Random(seed))
        large = balanced_sample(corpus, cap + 1, random.Random(seed))
        assert len(small) <= len(large)


def test_mask_id_reserved(toy_vocab):
    assert toy_vocab.id_to_token(MASK_ID) == "[MASK]"
