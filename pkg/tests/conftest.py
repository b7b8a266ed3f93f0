import json
import random

import pytest
import torch

from bali.corpus import AnnotatedSentence, Vocabulary, build_vocab, load_corpus
from bali.kg import load_kg

torch.set_num_threads(1)


def jsonl(records):
    """Render records as the line-record stream the loaders accept."""
    return [json.dumps(r) + "\n" for r in records]


@pytest.fixture
def toy_kg():
    """Four concepts, synonyms of mixed arity, five edges into C_pain/C_flu."""
    synonyms = jsonl([
        {"id": "C_asp", "names": ["aspirin", "acetylsalicylic acid"]},
        {"id": "C_pain", "names": ["pain"]},
        {"id": "C_flu", "names": ["flu", "influenza", "grippe"]},
        {"id": "C_ibu", "names": ["ibuprofen"]},
    ])
    triples = jsonl([
        {"head": "C_asp", "rel": "treats", "tail": "C_pain"},
        {"head": "C_ibu", "rel": "treats", "tail": "C_pain"},
        {"head": "C_flu", "rel": "causes", "tail": "C_pain"},
        {"head": "C_asp", "rel": "treats", "tail": "C_flu"},
        {"head": "C_ibu", "rel": "treats", "tail": "C_flu"},
    ])
    relations = jsonl([{"rel": "treats", "name": "treats"}, {"rel": "causes", "name": "causes"}])
    return load_kg(triples, synonyms, relations)


@pytest.fixture
def toy_corpus():
    return load_corpus(jsonl([
        {"tokens": ["aspirin", "treats", "pain", "in", "trials"],
         "mentions": [[0, 1, "C_asp"], [2, 3, "C_pain"]]},
        {"tokens": ["ibuprofen", "treats", "pain", "reliably"],
         "mentions": [[0, 1, "C_ibu"], [2, 3, "C_pain"]]},
        {"tokens": ["flu", "causes", "pain", "in", "winter"],
         "mentions": [[0, 1, "C_flu"], [2, 3, "C_pain"]]},
        {"tokens": ["aspirin", "treats", "flu", "sometimes"],
         "mentions": [[0, 1, "C_asp"], [2, 3, "C_flu"]]},
    ]))


@pytest.fixture
def toy_vocab(toy_corpus, toy_kg):
    return build_vocab(toy_corpus, toy_kg, min_freq=1)


@pytest.fixture
def micro_dataset(tmp_path):
    """A small generated world for integration-style tests."""
    from bali.synthetic import GeneratorSpec, generate_synthetic

    spec = GeneratorSpec(concepts=24, relations=3, sentences_per_concept=(2, 3))
    return generate_synthetic(spec, random.Random(13), tmp_path / "data")


def sentences(*texts_with_mentions):
    out = []
    for tokens, mentions in texts_with_mentions:
        out.append(AnnotatedSentence(tuple(tokens), tuple(mentions)))
    return out
