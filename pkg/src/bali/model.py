"""The joint alignment model: one trainable text encoder shared by the
sentence side and the graph side, plus the pathway-specific graph components.

Gradients of the alignment loss flow into the text encoder both through the
pooled entity embeddings and through the synonym encodings that initialize
node vectors; the latter path can be cut with ``freeze_node_init``.
"""

from __future__ import annotations

import random
from typing import Sequence

import torch
from torch import nn

from .config import RunConfig
from .corpus import Vocabulary
from .encoders import (
    EntityPooler,
    GraphEncoder,
    RelationEmbeddings,
    TextEncoder,
    encode_linearized_batch,
    encode_names,
)
from .kg import KnowledgeGraph, Subgraph, linearize, sample_synonym
from .objectives import PairClassifier


class AlignmentModel(nn.Module):
    """Bundles every trainable component for one run configuration."""

    def __init__(
        self,
        cfg: RunConfig,
        vocab: Vocabulary,
        relation_ids: Sequence[str],
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.cfg = cfg
        m = cfg.model
        self.text_encoder = TextEncoder(
            vocab_size=len(vocab),
            dim=m.dim,
            num_layers=m.lm_layers,
            heads=m.heads,
            max_len=m.max_len,
            ffn_mult=m.ffn_mult,
            pre_norm=m.pre_norm,
            tie_mlm_head=m.tie_mlm_head,
            generator=generator,
            dtype=dtype,
        )
        self.pooler = EntityPooler(
            m.dim, mode=m.pooling, leaky_slope=m.leaky_slope,
            generator=generator, dtype=dtype,
        )
        self.graph_encoder = None
        self.relations = None
        self.classifier = None
        if m.pathway in ("gat", "graphsage"):
            self.graph_encoder = GraphEncoder(
                m.dim, m.gnn_layers, kind=m.pathway, heads=m.gat_heads,
                leaky_slope=m.leaky_slope, generator=generator, dtype=dtype,
            )
        elif m.pathway in ("distmult", "transe"):
            self.relations = RelationEmbeddings(
                relation_ids, m.dim, mode=m.pathway, generator=generator, dtype=dtype,
            )
        if cfg.objective.align == "classification":
            self.classifier = PairClassifier(m.dim, generator=generator, dtype=dtype)

    def lm_parameters(self):
        return list(self.text_encoder.parameters())

    def other_parameters(self):
        lm_ids = {id(p) for p in self.text_encoder.parameters()}
        return [p for p in self.parameters() if id(p) not in lm_ids]

    def entity_embed(self, hidden: torch.Tensor, spans) -> torch.Tensor:
        return self.pooler(hidden, spans)

    def graph_embed(
        self,
        kg: KnowledgeGraph,
        vocab: Vocabulary,
        subgraphs: Sequence[Subgraph],
        rng: random.Random,
        freeze_node_init: bool = False,
    ) -> torch.Tensor:
        """Batched graph-side embeddings for one subgraph per batch item."""
        pathway = self.cfg.model.pathway
        if pathway == "linearized":
            texts = [linearize(kg, sg, rng) for sg in subgraphs]
            return encode_linearized_batch(self.text_encoder, vocab, texts)
        if pathway == "textual":
            names = [sample_synonym(kg, sg.center, rng) for sg in subgraphs]
            return encode_names(self.text_encoder, vocab, names)
        if pathway in ("distmult", "transe"):
            return self._translation_embed(kg, vocab, subgraphs, rng, freeze_node_init)
        return self._gnn_embed(kg, vocab, subgraphs, rng, freeze_node_init)

    def _sampled_name_vectors(self, vocab, names: list[str], freeze: bool) -> torch.Tensor:
        vecs = encode_names(self.text_encoder, vocab, names)
        return vecs.detach() if freeze else vecs

    def _gnn_embed(self, kg, vocab, subgraphs, rng, freeze):
        # one synonym draw per distinct node per item, centers first
        names: list[str] = []
        node_slots: list[dict[str, int]] = []
        for sg in subgraphs:
            slots: dict[str, int] = {}
            for node in [sg.center] + [u for u, _, _ in sg.edges]:
                if node not in slots:
                    slots[node] = len(names)
                    names.append(sample_synonym(kg, node, rng))
            node_slots.append(slots)
        vecs = self._sampled_name_vectors(vocab, names, freeze)

        dim = self.cfg.model.dim
        b = len(subgraphs)
        max_n = max((len(sg.edges) for sg in subgraphs), default=0)
        center = torch.stack([vecs[slots[sg.center]] for sg, slots in zip(subgraphs, node_slots)])
        neighbors = vecs.new_zeros(b, max_n, dim)
        mask = torch.zeros(b, max_n, dtype=torch.bool)
        for i, (sg, slots) in enumerate(zip(subgraphs, node_slots)):
            for j, (u, _, _) in enumerate(sg.edges):
                neighbors[i, j] = vecs[slots[u]]
                mask[i, j] = True
        return self.graph_encoder.forward_batch(center, neighbors, mask)

    def _translation_embed(self, kg, vocab, subgraphs, rng, freeze):
        names: list[str] = []
        rels: list[str] = []
        bounds: list[tuple[int, int]] = []
        for sg in subgraphs:
            if not sg.edges:
                raise ValueError(
                    f"translation pathway needs >= 1 edge, center {sg.center!r} has none"
                )
            start = len(names)
            for u, r, _ in sg.edges:
                names.append(sample_synonym(kg, u, rng))
                rels.append(r)
            bounds.append((start, len(names)))
        vecs = self._sampled_name_vectors(vocab, names, freeze)
        rel_vecs = self.relations(rels)
        translated = rel_vecs * vecs if self.cfg.model.pathway == "distmult" else vecs + rel_vecs
        return torch.stack([translated[s:e].mean(dim=0) for s, e in bounds])


def build_model(
    cfg: RunConfig,
    vocab: Vocabulary,
    relation_ids: Sequence[str],
    seed: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> AlignmentModel:
    generator = torch.Generator()
    generator.manual_seed(cfg.seed if seed is None else seed)
    return AlignmentModel(cfg, vocab, relation_ids, generator=generator, dtype=dtype)
