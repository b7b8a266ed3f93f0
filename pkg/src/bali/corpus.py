"""Annotated corpus, word-level vocabulary, and concept-balanced sampling.

Tokenization is whitespace splitting plus lowercasing. Special tokens sit at
fixed reserved ids 0..4 and can never be produced by normalizing raw text: a
corpus token that spells a special literal is mapped to [UNK] instead.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ValidationError
from .kg import KnowledgeGraph, _iter_records, _require

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

_SPECIAL_LOWER = {t.lower() for t in SPECIAL_TOKENS}

Mention = tuple[int, int, str]  # (start, end exclusive, concept id)


def normalize_token(token: str) -> str | None:
    """Lowercase a raw token; tokens spelling a special literal map to None."""
    lowered = token.lower()
    if lowered in _SPECIAL_LOWER:
        return None
    return lowered


@dataclass(frozen=True)
class AnnotatedSentence:
    tokens: tuple[str, ...]
    mentions: tuple[Mention, ...]

    def __post_init__(self):
        n = len(self.tokens)
        spans = []
        for start, end, cid in self.mentions:
            if not (0 <= start < end <= n):
                raise ValidationError(f"mention span [{start}, {end}) out of range for {n} tokens")
            if not cid:
                raise ValidationError("mention has an empty concept id")
            spans.append((start, end))
        spans.sort()
        for (s1, e1), (s2, _) in zip(spans, spans[1:]):
            if s2 < e1:
                raise ValidationError(f"overlapping mention spans [{s1},{e1}) and [{s2},...)")

    @property
    def concept_ids(self) -> set[str]:
        return {cid for _, _, cid in self.mentions}


class Vocabulary:
    """Bijective token<->id map with the five specials at fixed ids 0..4."""

    def __init__(self, entries: Sequence[str]):
        tokens = list(SPECIAL_TOKENS) + list(entries)
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary entries must be unique and disjoint from specials")
        self.tokens = tokens
        self._index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_token_list(cls, tokens: Sequence[str]) -> "Vocabulary":
        """Rebuild from a full id-ordered token list (e.g. out of a checkpoint)."""
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValidationError("token list does not start with the reserved specials")
        return cls(tokens[len(SPECIAL_TOKENS):])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def num_specials(self) -> int:
        return len(SPECIAL_TOKENS)

    def encode_token(self, raw: str) -> int:
        normalized = normalize_token(raw)
        if normalized is None:
            return UNK_ID
        return self._index.get(normalized, UNK_ID)

    def id_to_token(self, idx: int) -> str:
        return self.tokens[idx]


def load_corpus(source) -> list[AnnotatedSentence]:
    """Parse and validate a line-record corpus stream."""
    sentences = []
    for lineno, rec in _iter_records(source, "corpus"):
        tokens = _require(rec, "tokens", lineno, "corpus")
        mentions = _require(rec, "mentions", lineno, "corpus")
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise ValidationError(f"record {lineno}: tokens must be a list of strings")
        try:
            parsed = tuple((int(s), int(e), str(c)) for s, e, c in mentions)
            sentences.append(AnnotatedSentence(tuple(tokens), parsed))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"record {lineno}: malformed mentions: {exc}") from exc
        except ValidationError as exc:
            raise ValidationError(f"record {lineno}: {exc}") from exc
    return sentences


def balanced_sample(
    corpus: list[AnnotatedSentence], per_concept_cap: int, rng: random.Random
) -> list[AnnotatedSentence]:
    """Concept-balanced subset of the corpus.

    Concepts are visited in random order; each scans its sentences in random
    order and stops after ``per_concept_cap`` of them. A sentence already
    selected for an earlier concept counts toward the quota but is not added
    twice. Output preserves corpus order.
    """
    if per_concept_cap < 1:
        raise ValueError("per_concept_cap must be >= 1")
    by_concept: dict[str, list[int]] = {}
    for i, sent in enumerate(corpus):
        for _, _, cid in sent.mentions:
            bucket = by_concept.setdefault(cid, [])
            if not bucket or bucket[-1] != i:
                bucket.append(i)

    concept_order = list(by_concept)
    rng.shuffle(concept_order)
    selected: set[int] = set()
    for cid in concept_order:
        candidates = list(by_concept[cid])
        rng.shuffle(candidates)
        quota = 0
        for idx in candidates:
            if quota >= per_concept_cap:
                break
            quota += 1
            selected.add(idx)
    return [corpus[i] for i in sorted(selected)]


def build_vocab(
    corpus: list[AnnotatedSentence], kg: KnowledgeGraph | None, min_freq: int = 1
) -> Vocabulary:
    """Frequency-filtered vocabulary over corpus tokens, KG synonym tokens,
    and relation-name tokens. Entry order: frequency descending, then
    lexicographic; ids start right after the specials."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if not corpus:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()

    def add_text(text_tokens: Iterable[str]):
        for tok in text_tokens:
            normalized = normalize_token(tok)
            if normalized:
                counts[normalized] += 1

    for sent in corpus:
        add_text(sent.tokens)
    if kg is not None:
        for names in kg.synonyms.values():
            for name in names:
                add_text(name.split())
        for name in kg.relation_names.values():
            add_text(name.split())

    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def encode(
    sentence: AnnotatedSentence, vocab: Vocabulary, max_len: int
) -> tuple[list[int], list[Mention]]:
    """Token ids ``[CLS] body [SEP]`` with the body truncated to max_len - 2.

    Mention spans shift by +1 for the leading [CLS]; mentions that do not
    survive truncation in full are dropped.
    """
    if max_len < 3:
        raise ValueError("max_len must be >= 3")
    body = sentence.tokens[: max_len - 2]
    ids = [CLS_ID] + [vocab.encode_token(t) for t in body] + [SEP_ID]
    mentions = [
        (start + 1, end + 1, cid)
        for start, end, cid in sentence.mentions
        if end <= len(body)
    ]
    return ids, mentions


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    """Body tokens of an encoded sequence (structural specials stripped)."""
    return [
        vocab.id_to_token(i)
        for i in ids
        if i not in (PAD_ID, CLS_ID, SEP_ID)
    ]


def tokenize_name(name: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """Encode a bare name string as ``[CLS] tokens [SEP]`` ids."""
    body = name.split()[: max_len - 2]
    return [CLS_ID] + [vocab.encode_token(t) for t in body] + [SEP_ID]


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
