"""Text encoder, entity-span pooling, and the graph-side representation
pathways (GAT, GraphSAGE, linearized-graph, DistMult/TransE translations,
textual-only).

All forward passes are pure functions of (parameters, inputs) and are
deterministic in single-threaded execution. A debug flag turns on finiteness
assertions on every public op output.
"""

from __future__ import annotations

import math
import random
from typing import Sequence

import torch
from torch import nn

from .corpus import CLS_ID, PAD_ID, SEP_ID, Vocabulary, tokenize_name
from .errors import UnknownConceptError
from .kg import KnowledgeGraph, Subgraph, linearize, sample_synonym

_DEBUG_FINITE = False


def set_debug_finite(enabled: bool) -> None:
    global _DEBUG_FINITE
    _DEBUG_FINITE = enabled


def check_finite(tensor: torch.Tensor, what: str) -> torch.Tensor:
    if _DEBUG_FINITE and not torch.isfinite(tensor).all():
        raise AssertionError(f"non-finite values in {what}")
    return tensor


def _init_weight(tensor: torch.Tensor, generator: torch.Generator | None, std: float = 0.02):
    nn.init.trunc_normal_(tensor, std=std, a=-2 * std, b=2 * std, generator=generator)


def _init_linear(linear: nn.Linear, generator: torch.Generator | None):
    _init_weight(linear.weight, generator)
    if linear.bias is not None:
        nn.init.zeros_(linear.bias)


class TransformerBlock(nn.Module):
    """Multi-head self-attention + feed-forward, pre- or post-norm."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, pre_norm: bool):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.pre_norm = pre_norm
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.ffn_in = nn.Linear(dim, ffn_dim)
        self.ffn_out = nn.Linear(ffn_dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)

    def _attend(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        shape = (b, n, self.heads, self.head_dim)
        q = self.q(x).view(shape).transpose(1, 2)  # (b, h, n, hd)
        k = self.k(x).view(shape).transpose(1, 2)
        v = self.v(x).view(shape).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        mixed = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(mixed)

    def _ffn(self, x: torch.Tensor) -> torch.Tensor:
        return self.ffn_out(torch.nn.functional.gelu(self.ffn_in(x)))

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        if self.pre_norm:
            x = x + self._attend(self.norm1(x), key_mask)
            x = x + self._ffn(self.norm2(x))
        else:
            x = self.norm1(x + self._attend(x, key_mask))
            x = self.norm2(x + self._ffn(x))
        return x


class TextEncoder(nn.Module):
    """Transformer encoder over word ids with a (optionally weight-tied) MLM head.

    Padding positions are excluded from attention as keys, so their content
    never influences non-pad outputs.
    """

    def __init__(
        self,
        vocab_size: int,
        dim: int = 64,
        num_layers: int = 2,
        heads: int = 2,
        max_len: int = 64,
        ffn_mult: int = 4,
        pre_norm: bool = True,
        tie_mlm_head: bool = True,
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.dim = dim
        self.max_len = max_len
        self.tie_mlm_head = tie_mlm_head
        self.token_embedding = nn.Parameter(torch.empty(vocab_size, dim))
        self.position_embedding = nn.Parameter(torch.empty(max_len, dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, heads, ffn_mult * dim, pre_norm) for _ in range(num_layers)
        )
        self.final_norm = nn.LayerNorm(dim) if pre_norm else None
        if not tie_mlm_head:
            self.mlm_weight = nn.Parameter(torch.empty(vocab_size, dim))
        self.mlm_bias = nn.Parameter(torch.zeros(vocab_size))
        self._reset_parameters(generator)
        self.to(dtype)

    def _reset_parameters(self, generator):
        _init_weight(self.token_embedding, generator)
        _init_weight(self.position_embedding, generator)
        if not self.tie_mlm_head:
            _init_weight(self.mlm_weight, generator)
        for block in self.blocks:
            for lin in (block.q, block.k, block.v, block.out, block.ffn_in, block.ffn_out):
                _init_linear(lin, generator)

    @property
    def dtype(self) -> torch.dtype:
        return self.token_embedding.dtype

    def forward(self, ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        if ids.dim() != 2:
            raise ValueError("ids must be (batch, length)")
        b, n = ids.shape
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.max_len}")
        mask = attention_mask.bool()
        x = self.token_embedding[ids] + self.position_embedding[:n]
        for block in self.blocks:
            x = block(x, mask)
        if self.final_norm is not None:
            x = self.final_norm(x)
        return check_finite(x, "text encoder output")

    def mlm_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        weight = self.token_embedding if self.tie_mlm_head else self.mlm_weight
        return hidden @ weight.t() + self.mlm_bias


def lm_encode(enc: TextEncoder, ids, attention_mask=None) -> torch.Tensor:
    """Contextual embeddings for one sequence (length x dim)."""
    ids_t = torch.as_tensor(ids, dtype=torch.long)
    if ids_t.dim() != 1:
        raise ValueError("lm_encode takes a single id sequence")
    if attention_mask is None:
        mask = ids_t != PAD_ID
    else:
        mask = torch.as_tensor(attention_mask).bool()
    return enc(ids_t.unsqueeze(0), mask.unsqueeze(0))[0]


class EntityPooler(nn.Module):
    """Pools a mention's token embeddings into one entity vector.

    Modes: ``mean`` (no parameters), ``weighted`` (learned attention logits),
    ``gat`` (one attention layer treating span tokens as neighbors of a
    virtual entity node), ``transformer`` (one self-attention layer over the
    span followed by a mean).
    """

    MODES = ("mean", "weighted", "gat", "transformer")

    def __init__(
        self,
        dim: int,
        mode: str = "mean",
        leaky_slope: float = 0.2,
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"unknown pooling mode {mode!r}")
        self.mode = mode
        self.act = nn.LeakyReLU(leaky_slope)
        if mode == "weighted":
            # zero init makes the first forward equal plain mean pooling
            self.weights = nn.Parameter(torch.zeros(dim))
        elif mode == "gat":
            self.W = nn.Parameter(torch.empty(dim, dim))
            self.W_self = nn.Parameter(torch.empty(dim, dim))
            self.attn = nn.Parameter(torch.empty(2 * dim))
            _init_weight(self.W, generator)
            _init_weight(self.W_self, generator)
            _init_weight(self.attn, generator)
        elif mode == "transformer":
            self.q = nn.Linear(dim, dim)
            self.k = nn.Linear(dim, dim)
            self.v = nn.Linear(dim, dim)
            self.out = nn.Linear(dim, dim)
            for lin in (self.q, self.k, self.v, self.out):
                _init_linear(lin, generator)
        self.to(dtype)

    def pool_one(self, span_hidden: torch.Tensor) -> torch.Tensor:
        if span_hidden.dim() != 2 or span_hidden.shape[0] == 0:
            raise ValueError("entity span must cover at least one token")
        if self.mode == "mean":
            return span_hidden.mean(dim=0)
        if self.mode == "weighted":
            logits = span_hidden @ self.weights
            return torch.softmax(logits, dim=0) @ span_hidden
        if self.mode == "gat":
            center = span_hidden.mean(dim=0)
            z_u = span_hidden @ self.W.t()
            z_c = self.W @ center
            scores = self.act(torch.cat([z_u, z_c.expand_as(z_u)], dim=1)) @ self.attn
            alpha = torch.softmax(scores, dim=0)
            return self.act(alpha @ z_u + self.W_self @ center)
        # transformer: one attention layer restricted to the span, then mean
        q, k, v = self.q(span_hidden), self.k(span_hidden), self.v(span_hidden)
        attn = torch.softmax(q @ k.t() / math.sqrt(span_hidden.shape[1]), dim=-1)
        return (span_hidden + self.out(attn @ v)).mean(dim=0)

    def forward(self, hidden: torch.Tensor, spans: Sequence[tuple[int, int]]) -> torch.Tensor:
        pooled = [self.pool_one(hidden[i, s:e]) for i, (s, e) in enumerate(spans)]
        return check_finite(torch.stack(pooled), "pooled entity embeddings")


def pool_entity(
    hidden: torch.Tensor,
    span: tuple[int, int],
    mode: str = "mean",
    pooler: EntityPooler | None = None,
) -> torch.Tensor:
    """Pool one mention span of a (length x dim) embedding matrix."""
    start, end = span
    if end <= start:
        raise ValueError(f"empty entity span [{start}, {end})")
    if mode == "mean" and pooler is None:
        return check_finite(hidden[start:end].mean(dim=0), "pooled entity embedding")
    if pooler is None or pooler.mode != mode:
        raise ValueError(f"pooling mode {mode!r} needs a matching EntityPooler")
    return pooler.pool_one(hidden[start:end])


class GraphEncoder(nn.Module):
    """Message passing over a capped 1-hop star subgraph.

    ``gat``: per layer and head, edge scores attn . act([W g_u || W g_v]),
    softmax over the center's incoming edges, then
    act(sum alpha W g_u + W_self g_v); head outputs are concatenated.
    Neighbors carry no incoming edges of their own inside the star, so they
    advance through the self-update only.

    ``graphsage``: act(W mean_u g_u + W_self g_v), same star convention.
    """

    KINDS = ("gat", "graphsage")

    def __init__(
        self,
        dim: int,
        num_layers: int,
        kind: str = "gat",
        heads: int = 2,
        leaky_slope: float = 0.2,
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if kind not in self.KINDS:
            raise ValueError(f"unknown graph encoder kind {kind!r}")
        if num_layers < 1:
            raise ValueError("graph encoder needs >= 1 layer")
        if kind == "graphsage":
            heads = 1
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by {heads} attention heads")
        self.kind = kind
        self.dim = dim
        self.num_layers = num_layers
        self.heads = heads
        self.head_dim = dim // heads
        self.act = nn.LeakyReLU(leaky_slope)
        self.W = nn.ParameterList()
        self.W_self = nn.ParameterList()
        self.attn = nn.ParameterList()
        for _ in range(num_layers):
            w = nn.Parameter(torch.empty(heads, self.head_dim, dim))
            w_self = nn.Parameter(torch.empty(heads, self.head_dim, dim))
            _init_weight(w, generator)
            _init_weight(w_self, generator)
            self.W.append(w)
            self.W_self.append(w_self)
            if kind == "gat":
                a = nn.Parameter(torch.empty(heads, 2 * self.head_dim))
                _init_weight(a, generator)
                self.attn.append(a)
        self.to(dtype)

    def forward_batch(
        self,
        center: torch.Tensor,
        neighbors: torch.Tensor,
        mask: torch.Tensor,
        return_attention: bool = False,
    ):
        """center (B, d); neighbors (B, N, d) zero-padded; mask (B, N) bool.

        Returns final-layer center embeddings (B, d), and per-layer attention
        weights (B, N, heads) when asked (gat only).
        """
        b, n_pad, _ = neighbors.shape
        attention_layers = []
        for layer in range(self.num_layers):
            w, w_self = self.W[layer], self.W_self[layer]
            z_self = torch.einsum("hkd,bd->bhk", w_self, center)
            if self.kind == "gat":
                if n_pad > 0:
                    z_u = torch.einsum("hkd,bnd->bnhk", w, neighbors)
                    z_c = torch.einsum("hkd,bd->bhk", w, center)
                    pair = torch.cat([z_u, z_c.unsqueeze(1).expand_as(z_u)], dim=-1)
                    scores = torch.einsum("hk,bnhk->bnh", self.attn[layer], self.act(pair))
                    scores = scores.masked_fill(~mask[:, :, None], -1e30)
                    alpha = torch.softmax(scores, dim=1) * mask[:, :, None]
                    message = torch.einsum("bnh,bnhk->bhk", alpha, z_u)
                else:
                    alpha = center.new_zeros(b, 0, self.heads)
                    message = torch.zeros_like(z_self)
                new_center = self.act(message + z_self).reshape(b, self.dim)
                if return_attention:
                    attention_layers.append(alpha)
            else:
                if n_pad > 0:
                    maskf = mask.to(neighbors.dtype).unsqueeze(-1)
                    counts = maskf.sum(dim=1).clamp(min=1)
                    mean_neigh = (neighbors * maskf).sum(dim=1) / counts
                else:
                    mean_neigh = torch.zeros_like(center)
                pooled = torch.einsum("hkd,bd->bhk", w, mean_neigh)
                new_center = self.act(pooled + z_self).reshape(b, self.dim)
            if n_pad > 0:
                neighbors = self.act(
                    torch.einsum("hkd,bnd->bnhk", self.W_self[layer], neighbors)
                ).reshape(b, n_pad, self.dim)
            center = new_center
        center = check_finite(center, "graph encoder output")
        if return_attention:
            return center, attention_layers
        return center


def gnn_forward(
    encoder: GraphEncoder,
    sg: Subgraph,
    init: dict[str, torch.Tensor],
    return_attention: bool = False,
):
    """Encode one subgraph given initial node vectors keyed by concept id."""
    if sg.center not in init:
        raise UnknownConceptError(f"no init vector for center {sg.center!r}")
    for u in sg.neighbor_ids:
        if u not in init:
            raise UnknownConceptError(f"no init vector for neighbor {u!r}")
    center = init[sg.center].unsqueeze(0)
    n = len(sg.edges)
    if n:
        neighbors = torch.stack([init[u] for u, _, _ in sg.edges]).unsqueeze(0)
        mask = torch.ones(1, n, dtype=torch.bool)
    else:
        neighbors = center.new_zeros(1, 0, encoder.dim)
        mask = torch.zeros(1, 0, dtype=torch.bool)
    out = encoder.forward_batch(center, neighbors, mask, return_attention=return_attention)
    if return_attention:
        vec, attn = out
        return vec[0], [a[0] for a in attn]
    return out[0]


class RelationEmbeddings(nn.Module):
    """One trainable vector per relation id, used by the translation pathways.

    DistMult vectors start near the multiplicative identity (ones), TransE
    vectors near the additive identity (zeros), so an untrained translation
    is approximately a pass-through.
    """

    def __init__(
        self,
        relation_ids: Sequence[str],
        dim: int,
        mode: str = "transe",
        generator: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if mode not in ("distmult", "transe"):
            raise ValueError(f"unknown translation mode {mode!r}")
        self.mode = mode
        self.index = {r: i for i, r in enumerate(relation_ids)}
        self.weight = nn.Parameter(torch.empty(len(self.index), dim))
        _init_weight(self.weight, generator)
        if mode == "distmult":
            with torch.no_grad():
                self.weight.add_(1.0)
        self.to(dtype)

    def forward(self, relation_ids: Sequence[str]) -> torch.Tensor:
        try:
            rows = [self.index[r] for r in relation_ids]
        except KeyError as exc:
            raise UnknownConceptError(f"unknown relation id {exc.args[0]!r}") from exc
        return self.weight[rows]


def encode_names(enc: TextEncoder, vocab: Vocabulary, names: Sequence[str]) -> torch.Tensor:
    """Encode bare name strings as [CLS] name [SEP] and mean-pool body tokens.

    Returns (len(names), dim). Names are batched into one forward pass.
    """
    seqs = [tokenize_name(n, vocab, enc.max_len) for n in names]
    max_n = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), max_n), PAD_ID, dtype=torch.long)
    attn = torch.zeros(len(seqs), max_n, dtype=torch.bool)
    body = torch.zeros(len(seqs), max_n, dtype=torch.bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.as_tensor(s)
        attn[i, : len(s)] = True
        body[i, 1 : len(s) - 1] = True
    hidden = enc(ids, attn)
    weights = body.to(hidden.dtype).unsqueeze(-1)
    pooled = (hidden * weights).sum(dim=1) / weights.sum(dim=1).clamp(min=1)
    return check_finite(pooled, "name embeddings")


def node_init(
    enc: TextEncoder,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    u: str,
    rng: random.Random,
) -> torch.Tensor:
    """Initial node vector: a sampled synonym encoded and mean-pooled."""
    name = sample_synonym(kg, u, rng)
    return encode_names(enc, vocab, [name])[0]


def textual_node_rep(
    enc: TextEncoder,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    v: str,
    rng: random.Random,
) -> torch.Tensor:
    """Graph-free node representation: identical to node_init."""
    return node_init(enc, kg, vocab, v, rng)


def linearized_ids(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """Ids for a linearized-subgraph string; the [CLS]/[SEP] literals inside
    the string map to the real special ids. Over-long inputs drop whole
    trailing edge segments."""
    ids = []
    for tok in text.split():
        if tok == "[CLS]":
            ids.append(CLS_ID)
        elif tok == "[SEP]":
            ids.append(SEP_ID)
        else:
            ids.append(vocab.encode_token(tok))
    if len(ids) <= max_len:
        return ids
    # segments end at [SEP]; keep the header and as many segments as fit
    boundaries = [i for i, t in enumerate(ids) if t == SEP_ID]
    for stop in reversed(boundaries):
        if stop + 1 <= max_len:
            return ids[: stop + 1]
    return ids[: max_len - 1] + [SEP_ID]


def encode_linearized_batch(
    enc: TextEncoder, vocab: Vocabulary, texts: Sequence[str]
) -> torch.Tensor:
    """Encode linearized-subgraph strings; returns their [CLS] embeddings."""
    seqs = [linearized_ids(t, vocab, enc.max_len) for t in texts]
    max_n = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), max_n), PAD_ID, dtype=torch.long)
    attn = torch.zeros(len(seqs), max_n, dtype=torch.bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.as_tensor(s)
        attn[i, : len(s)] = True
    hidden = enc(ids, attn)
    return check_finite(hidden[:, 0], "linearized graph embeddings")


def linearized_graph_encode(
    enc: TextEncoder,
    kg: KnowledgeGraph,
    sg: Subgraph,
    vocab: Vocabulary,
    rng: random.Random,
) -> torch.Tensor:
    """Encode a subgraph by linearizing it and taking the [CLS] embedding."""
    return encode_linearized_batch(enc, vocab, [linearize(kg, sg, rng)])[0]


def translation_node_rep(
    enc: TextEncoder,
    kg: KnowledgeGraph,
    sg: Subgraph,
    relations: RelationEmbeddings,
    mode: str,
    vocab: Vocabulary,
    rng: random.Random,
) -> torch.Tensor:
    """Mean of relation-translated neighbor name embeddings over the
    subgraph's edges. DistMult translates multiplicatively, TransE
    additively."""
    if mode not in ("distmult", "transe"):
        raise ValueError(f"unknown translation mode {mode!r}")
    if not sg.edges:
        raise ValueError(f"translation pathway needs >= 1 edge, center {sg.center!r} has none")
    names = [sample_synonym(kg, u, rng) for u, _, _ in sg.edges]
    heads = encode_names(enc, vocab, names)
    rel_vecs = relations([r for _, r, _ in sg.edges])
    translated = rel_vecs * heads if mode == "distmult" else heads + rel_vecs
    return check_finite(translated.mean(dim=0), "translated node embedding")
