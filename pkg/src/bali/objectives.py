"""Training objectives: MLM corruption and loss, the InfoNCE alignment loss,
the multi-similarity and classification alignment ablations, and the combined
objective.

All losses are pure functions of their tensor inputs and differentiable
through torch autograd.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import torch

from .corpus import MASK_ID, Vocabulary
from .encoders import check_finite

IGNORE_INDEX = -100


@dataclass
class MaskedBatchText:
    """One corrupted id sequence plus per-position labels.

    ``labels`` holds the original id at selected positions and IGNORE_INDEX
    elsewhere; ``selected`` marks the selected positions.
    """

    ids: list[int]
    labels: list[int]
    selected: list[bool]


def apply_mlm_mask(
    ids: list[int],
    vocab: Vocabulary,
    rng: random.Random,
    select_ratio: float = 0.15,
) -> MaskedBatchText:
    """BERT-style corruption: every non-special position is selected
    independently with ``select_ratio``; a selected token becomes [MASK] with
    p=0.8, stays unchanged with p=0.1, and is replaced by a random non-special
    vocabulary token with p=0.1."""
    num_specials = vocab.num_specials
    if not any(t >= num_specials for t in ids):
        raise ValueError("sequence has no non-special token to corrupt")
    if len(vocab) <= num_specials:
        raise ValueError("vocabulary has no non-special entries")
    corrupted = list(ids)
    labels = [IGNORE_INDEX] * len(ids)
    selected = [False] * len(ids)
    for pos, token in enumerate(ids):
        if token < num_specials:
            continue
        if rng.random() >= select_ratio:
            continue
        selected[pos] = True
        labels[pos] = token
        roll = rng.random()
        if roll < 0.8:
            corrupted[pos] = MASK_ID
        elif roll < 0.9:
            pass  # left unchanged
        else:
            corrupted[pos] = rng.randrange(num_specials, len(vocab))
    return MaskedBatchText(ids=corrupted, labels=labels, selected=selected)


def mlm_loss(logits: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, bool]:
    """Mean negative log-likelihood over labeled positions.

    ``labels`` may contain IGNORE_INDEX entries which are skipped. Returns
    (loss, had_labels); with no labeled position the loss is 0 and the flag
    False.
    """
    if logits.dim() != 2 or labels.dim() != 1 or logits.shape[0] != labels.shape[0]:
        raise ValueError("logits must be (positions, vocab) aligned with labels")
    keep = labels != IGNORE_INDEX
    if not bool(keep.any()):
        return logits.new_zeros(()), False
    kept_labels = labels[keep]
    if bool((kept_labels < 0).any()) or bool((kept_labels >= logits.shape[1]).any()):
        raise ValueError("label id out of vocabulary range")
    loss = torch.nn.functional.cross_entropy(logits[keep], kept_labels)
    return check_finite(loss, "mlm loss"), True


def _unit_rows(x: torch.Tensor, what: str) -> torch.Tensor:
    norms = x.norm(dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError(f"zero-norm row in {what}")
    return x / norms


def cosine_matrix(entity: torch.Tensor, graph: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities (B x B): rows are entities, columns graphs."""
    return _unit_rows(entity, "entity embeddings") @ _unit_rows(graph, "graph embeddings").t()


def infonce_from_cosines(
    cosines: torch.Tensor, tau: float, negatives_mode: str = "cross"
) -> torch.Tensor:
    """InfoNCE over a precomputed cosine matrix.

    ``cross``: item i contrasts cos(e_i, g_i) against cos(e_i, g_j) for all j
    (standard in-batch negatives). ``paired``: the denominator sums only the
    paired similarities cos(e_j, g_j) over the batch.
    """
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    if negatives_mode not in ("cross", "paired"):
        raise ValueError(f"unknown negatives_mode {negatives_mode!r}")
    scaled = cosines / tau
    diag = scaled.diagonal()
    if negatives_mode == "cross":
        per_item = torch.logsumexp(scaled, dim=1) - diag
    else:
        per_item = torch.logsumexp(diag, dim=0) - diag
    return per_item.mean()


def infonce_align_loss(
    entity: torch.Tensor,
    graph: torch.Tensor,
    tau: float = 0.07,
    negatives_mode: str = "cross",
) -> torch.Tensor:
    """Contrastive alignment of paired (entity, graph) embedding batches."""
    if entity.shape != graph.shape or entity.dim() != 2:
        raise ValueError("entity and graph batches must both be (B, d)")
    loss = infonce_from_cosines(cosine_matrix(entity, graph), tau, negatives_mode)
    return check_finite(loss, "infonce loss")


def ms_align_loss(
    entity: torch.Tensor,
    graph: torch.Tensor,
    alpha: float = 2.0,
    beta: float = 50.0,
    epsilon: float = 0.5,
) -> torch.Tensor:
    """Multi-similarity alignment loss with in-batch negatives.

    For anchor i the positive set is its paired graph embedding and the
    negative set the other in-batch graph embeddings, after the usual pair
    mining: negatives with s_n > min_pos - epsilon survive, positives with
    s_p < max_neg + epsilon survive. Per anchor:

        (1/alpha) * log(1 + sum_p exp(-alpha * (s_p - epsilon)))
      + (1/beta)  * log(1 + sum_n exp( beta  * (s_n - epsilon)))
    """
    if entity.shape != graph.shape or entity.dim() != 2:
        raise ValueError("entity and graph batches must both be (B, d)")
    sims = cosine_matrix(entity, graph)
    b = sims.shape[0]
    terms = []
    for i in range(b):
        pos = sims[i, i]
        neg = torch.cat([sims[i, :i], sims[i, i + 1:]])
        kept_neg = neg[neg > pos - epsilon] if neg.numel() else neg
        keep_pos = bool(neg.numel() == 0) or bool(pos < neg.max() + epsilon)
        item = sims.new_zeros(())
        if keep_pos:
            item = item + torch.log1p(torch.exp(-alpha * (pos - epsilon))) / alpha
        if kept_neg.numel():
            item = item + torch.log1p(torch.exp(beta * (kept_neg - epsilon)).sum()) / beta
        terms.append(item)
    return check_finite(torch.stack(terms).mean(), "multi-similarity loss")


class PairClassifier(torch.nn.Module):
    """One-layer network scoring whether (entity, graph) describe one concept."""

    def __init__(self, dim: int, generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.linear = torch.nn.Linear(2 * dim, 1)
        torch.nn.init.trunc_normal_(self.linear.weight, std=0.02, a=-0.04, b=0.04,
                                    generator=generator)
        torch.nn.init.zeros_(self.linear.bias)
        self.to(dtype)

    def forward(self, entity: torch.Tensor, graph: torch.Tensor) -> torch.Tensor:
        return self.linear(torch.cat([entity, graph], dim=1)).squeeze(-1)


def classification_align_loss(
    entity: torch.Tensor,
    graph: torch.Tensor,
    head: PairClassifier,
    rng: random.Random,
) -> torch.Tensor:
    """Binary cross-entropy over the B matched pairs (label 1) and B sampled
    mismatched pairs (label 0)."""
    b = entity.shape[0]
    if b < 2:
        raise ValueError("classification alignment needs a batch of >= 2")
    neg_cols = [rng.choice([j for j in range(b) if j != i]) for i in range(b)]
    logits = torch.cat([
        head(entity, graph),
        head(entity, graph[neg_cols]),
    ])
    targets = torch.cat([
        torch.ones(b, dtype=logits.dtype),
        torch.zeros(b, dtype=logits.dtype),
    ])
    loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, targets)
    return check_finite(loss, "classification alignment loss")


def total_loss(
    l_mlm: torch.Tensor,
    l_align: torch.Tensor,
    align_weight: float = 1.0,
    mlm_weight: float = 1.0,
) -> torch.Tensor:
    """Weighted sum of the two objectives; both weights default to 1."""
    return mlm_weight * l_mlm + align_weight * l_align
