import random

import pytest

from bali.corpus import load_corpus
from bali.errors import ConfigurationError
from bali.evaluation import load_eval_mentions
from bali.kg import load_kg
from bali.synthetic import GeneratorSpec, generate_synthetic


def read_all(files):
    return {
        p.name: p.read_bytes()
        for p in (files.triples, files.synonyms, files.relations, files.corpus, files.eval_mentions)
    }


class TestDeterminism:
    def test_same_seed_byte_identical(self, tmp_path):
        spec = GeneratorSpec(concepts=30, relations=3, sentences_per_concept=(2, 3))
        a = generate_synthetic(spec, random.Random(7), tmp_path / "a")
        b = generate_synthetic(spec, random.Random(7), tmp_path / "b")
        assert read_all(a) == read_all(b)

    def test_different_seed_differs(self, tmp_path):
        spec = GeneratorSpec(concepts=30, relations=3, sentences_per_concept=(2, 3))
        a = generate_synthetic(spec, random.Random(7), tmp_path / "a")
        b = generate_synthetic(spec, random.Random(8), tmp_path / "b")
        assert read_all(a) != read_all(b)


class TestContract:
    def test_zero_noise_mentions_are_exact_synonyms(self, tmp_path):
        spec = GeneratorSpec(concepts=20, relations=2, noise_rate=0.0,
                             sentences_per_concept=(2, 3))
        files = generate_synthetic(spec, random.Random(3), tmp_path / "d")
        kg = load_kg(files.triples, files.synonyms, files.relations)
        for sent in load_corpus(files.corpus):
            for start, end, cid in sent.mentions:
                surface = " ".join(sent.tokens[start:end])
                assert surface in kg.synonyms[cid]

    def test_every_node_mentioned_and_connected(self, micro_dataset):
        kg = load_kg(micro_dataset.triples, micro_dataset.synonyms, micro_dataset.relations)
        corpus = load_corpus(micro_dataset.corpus)
        mentioned = {cid for s in corpus for cid in s.concept_ids}
        assert mentioned == set(kg.nodes)
        assert all(kg.indegree(v) >= 1 for v in kg.nodes)

    def test_summary_counts_match_files(self, micro_dataset):
        kg = load_kg(micro_dataset.triples, micro_dataset.synonyms, micro_dataset.relations)
        corpus = load_corpus(micro_dataset.corpus)
        assert micro_dataset.summary["concepts"] == len(kg.nodes)
        assert micro_dataset.summary["edges"] == len(kg.edges)
        assert micro_dataset.summary["sentences"] == len(corpus)

    def test_eval_mentions_are_held_out(self, micro_dataset):
        kg = load_kg(micro_dataset.triples, micro_dataset.synonyms, micro_dataset.relations)
        corpus = load_corpus(micro_dataset.corpus)
        training_strings = {
            " ".join(s.tokens[a:b]) for s in corpus for a, b, _ in s.mentions
        }
        dictionary_strings = {n for names in kg.synonyms.values() for n in names}
        mentions = load_eval_mentions(micro_dataset.eval_mentions)
        assert mentions
        for mention, gold in mentions:
            assert gold in kg.nodes
            assert mention not in training_strings
            assert mention not in dictionary_strings

    def test_eval_mention_shares_stem_with_gold(self, micro_dataset):
        kg = load_kg(micro_dataset.triples, micro_dataset.synonyms, micro_dataset.relations)
        for mention, gold in load_eval_mentions(micro_dataset.eval_mentions):
            stem = mention.split()[0]
            assert any(stem in name.split() for name in kg.synonyms[gold])


class TestInfeasibleSpecs:
    def test_zero_relations_with_edges(self):
        with pytest.raises(ConfigurationError):
            GeneratorSpec(relations=0).validate()

    def test_zero_min_edges(self):
        with pytest.raises(ConfigurationError):
            GeneratorSpec(edges_per_node=(0, 3)).validate()

    def test_single_concept(self):
        with pytest.raises(ConfigurationError):
            GeneratorSpec(concepts=1).validate()

    def test_bad_range(self):
        with pytest.raises(ConfigurationError):
            GeneratorSpec(sentences_per_concept=(5, 2)).validate()

    def test_edges_exceed_candidates(self):
        with pytest.raises(ConfigurationError):
            GeneratorSpec(concepts=3, edges_per_node=(1, 5)).validate()
