"""Zero-shot entity-linking retrieval, cross-modal recall, masked-token
accuracy, and report emission.

Retrieval scores every (concept, name) dictionary row by cosine against the
mention embedding, aggregates per concept by the max over its rows, and sorts
by descending score with ties broken by the concept's first dictionary row.
Per-pair scores are plain dot products of unit vectors so an exhaustive
oracle can reproduce the ranking exactly.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .corpus import Vocabulary, encode
from .encoders import TextEncoder, encode_names
from .errors import ValidationError
from .kg import KnowledgeGraph, _iter_records, _require, local_subgraph
from .model import AlignmentModel
from .objectives import IGNORE_INDEX, apply_mlm_mask


@dataclass
class DictionaryIndex:
    """One row per (concept, name): unit-normalized embeddings plus ids."""

    concept_ids: list[str]
    names: list[str]
    matrix: np.ndarray  # (N, d) float64, unit rows

    def __len__(self) -> int:
        return len(self.names)


@dataclass
class RankingResult:
    mention: str
    gold: str
    candidates: list[str]  # concept ids, best first, deduplicated
    scores: list[float]


def _unit_rows_np(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


def _embed_strings(enc: TextEncoder, vocab: Vocabulary, strings, batch_size=128) -> np.ndarray:
    chunks = []
    with torch.no_grad():
        for i in range(0, len(strings), batch_size):
            part = encode_names(enc, vocab, strings[i : i + batch_size])
            chunks.append(part.to(torch.float64).cpu().numpy())
    return np.concatenate(chunks, axis=0)


def embed_dictionary(enc: TextEncoder, kg: KnowledgeGraph, vocab: Vocabulary) -> DictionaryIndex:
    """Embed every (concept, name) pair; rows are unit-normalized.

    Names that tokenize to an empty body are skipped with a warning.
    """
    concept_ids, names = [], []
    for cid, synonyms in kg.synonyms.items():
        for name in synonyms:
            if not name.split():
                warnings.warn(f"skipping empty dictionary name for {cid!r}")
                continue
            concept_ids.append(cid)
            names.append(name)
    matrix = _unit_rows_np(_embed_strings(enc, vocab, names))
    return DictionaryIndex(concept_ids=concept_ids, names=names, matrix=matrix)


def load_eval_mentions(source) -> list[tuple[str, str]]:
    """Parse the held-out mention file into (mention, gold concept) pairs."""
    records = []
    for lineno, rec in _iter_records(source, "eval mention"):
        mention = _require(rec, "mention", lineno, "eval mention")
        gold = _require(rec, "gold", lineno, "eval mention")
        if not isinstance(mention, str) or not isinstance(gold, str):
            raise ValidationError(f"record {lineno}: mention and gold must be strings")
        records.append((mention, gold))
    return records


def link_mentions(
    enc: TextEncoder,
    index: DictionaryIndex,
    mentions: list[tuple[str, str]],
    vocab: Vocabulary,
    k: int,
) -> list[RankingResult]:
    """Rank concepts for each mention by max cosine over their names.

    Scores are computed row by row with np.dot; concepts are sorted by
    (-score, first row index) so tie order is stable and reproducible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    queries = _unit_rows_np(_embed_strings(enc, vocab, [m for m, _ in mentions]))
    first_row: dict[str, int] = {}
    for row, cid in enumerate(index.concept_ids):
        first_row.setdefault(cid, row)
    results = []
    for (mention, gold), query in zip(mentions, queries):
        best: dict[str, float] = {}
        for row in range(len(index)):
            score = float(np.dot(index.matrix[row], query))
            cid = index.concept_ids[row]
            if cid not in best or score > best[cid]:
                best[cid] = score
        ordered = sorted(best.items(), key=lambda item: (-item[1], first_row[item[0]]))
        top = ordered[:k]
        results.append(
            RankingResult(
                mention=mention,
                gold=gold,
                candidates=[cid for cid, _ in top],
                scores=[s for _, s in top],
            )
        )
    return results


def accuracy_at_k(results: list[RankingResult], k: int) -> float:
    """Fraction of mentions whose gold concept appears in the top-k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not results:
        raise ValueError("no ranking results to score")
    hits = sum(1 for r in results if r.gold in r.candidates[:k])
    return hits / len(results)


def cross_modal_recall(
    model: AlignmentModel,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    probes: list[tuple[str, str]],
    cfg: RunConfig,
    k: int,
    rng: random.Random,
) -> float:
    """Direct probe of the alignment: fraction of probes whose own graph
    embedding is within the top-k cosine neighbors of the probe's text
    embedding, among all probed concepts.

    ``probes`` holds (mention string, concept id) pairs, one per concept.
    Concepts without edges are skipped with a warning for pathways that
    require them.
    """
    need_edges = cfg.model.pathway in ("distmult", "transe")
    kept = []
    for mention, cid in probes:
        if need_edges and kg.indegree(cid) == 0:
            warnings.warn(f"skipping isolated concept {cid!r} for pathway {cfg.model.pathway}")
            continue
        kept.append((mention, cid))
    if not kept:
        raise ValueError("no probeable concepts")
    subgraphs = [
        local_subgraph(kg, cid, cfg.trainer.neighbor_cap, rng) for _, cid in kept
    ]
    with torch.no_grad():
        entity = _embed_strings(model.text_encoder, vocab, [m for m, _ in kept])
        graph = model.graph_embed(kg, vocab, subgraphs, rng).to(torch.float64).cpu().numpy()
    entity = _unit_rows_np(entity)
    graph = _unit_rows_np(graph)
    sims = entity @ graph.T
    n = len(kept)
    k_eff = min(k, n)
    hits = 0
    for i in range(n):
        top = np.argsort(-sims[i], kind="stable")[:k_eff]
        hits += int(i in top)
    return hits / n


def masked_token_accuracy(
    enc: TextEncoder,
    sentences,
    vocab: Vocabulary,
    rng: random.Random,
    max_len: int,
    select_ratio: float = 0.15,
) -> float:
    """Apply standard corruption and measure argmax recovery of the
    original token at selected positions."""
    if not sentences:
        raise ValueError("need at least one sentence")
    total = 0
    correct = 0
    with torch.no_grad():
        for sent in sentences:
            ids, _ = encode(sent, vocab, max_len)
            if not any(t >= vocab.num_specials for t in ids):
                continue
            masked = apply_mlm_mask(ids, vocab, rng, select_ratio)
            positions = [i for i, lab in enumerate(masked.labels) if lab != IGNORE_INDEX]
            if not positions:
                continue
            ids_t = torch.as_tensor(masked.ids, dtype=torch.long).unsqueeze(0)
            mask_t = torch.ones_like(ids_t, dtype=torch.bool)
            hidden = enc(ids_t, mask_t)[0]
            logits = enc.mlm_logits(hidden[positions])
            predictions = logits.argmax(dim=1)
            for pos, pred in zip(positions, predictions.tolist()):
                total += 1
                correct += int(pred == masked.labels[pos])
    if total == 0:
        raise ValueError("corruption selected no positions; sample more sentences")
    return correct / total


def write_report(
    path,
    cfg: RunConfig,
    checkpoint_id: str,
    metrics: list[dict],
) -> Path:
    """Structured JSON report plus a plain-text table next to it."""
    path = Path(path)
    report = {
        "config_hash": cfg.config_hash(),
        "checkpoint": checkpoint_id,
        "seed": cfg.seed,
        "metrics": metrics,
    }
    path.write_text(json.dumps(report, indent=2) + "\n")
    txt_path = path.with_suffix(".txt")
    lines = [
        f"checkpoint: {checkpoint_id}",
        f"config:     {report['config_hash']}  (seed {cfg.seed})",
        "",
        f"{'metric':<28}{'k':>4}  {'split':<10}{'value':>10}",
        "-" * 56,
    ]
    for m in metrics:
        k = m.get("k")
        lines.append(
            f"{m['name']:<28}{('' if k is None else str(k)):>4}  "
            f"{m.get('split', '-'):<10}{m['value']:>10.4f}"
        )
    txt_path.write_text("\n".join(lines) + "\n")
    return path
