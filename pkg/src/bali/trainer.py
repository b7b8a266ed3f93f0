"""Batch assembly, the two-group optimizer, the pretraining loop, and resume.

Training is single-threaded and fully driven by one ``random.Random`` stream,
so the metric stream is a pure function of (config, seed) and resuming from a
checkpoint reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import torch

from .checkpoint import (
    load_checkpoint,
    restore_model,
    restore_optimizer,
    restore_rng,
    save_training_checkpoint,
)
from .config import RunConfig
from .corpus import (
    AnnotatedSentence,
    Vocabulary,
    balanced_sample,
    build_vocab,
    encode,
    load_corpus,
)
from .errors import ConfigurationError, NumericalError
from .kg import KnowledgeGraph, Subgraph, load_kg, local_subgraph
from .model import AlignmentModel, build_model
from .objectives import (
    IGNORE_INDEX,
    apply_mlm_mask,
    classification_align_loss,
    infonce_align_loss,
    mlm_loss,
    ms_align_loss,
    total_loss,
)

METRIC_KEYS = ("step", "loss_mlm", "loss_align", "loss", "lr_lm", "lr_other", "xmodal_top1")


@dataclass
class TrainingBatch:
    """B aligned items: corrupted text, one anchor mention each, one subgraph each.

    Anchor concept ids are pairwise distinct so in-batch negatives are true
    negatives; every anchor span survives truncation by construction.
    """

    ids: torch.Tensor            # (B, L) corrupted token ids, padded
    attention_mask: torch.Tensor  # (B, L) bool
    labels: torch.Tensor         # (B, L), IGNORE_INDEX outside selected positions
    spans: list[tuple[int, int]]
    concepts: list[str]
    subgraphs: list[Subgraph]

    def __len__(self) -> int:
        return len(self.concepts)


def lr_at(step: int, total_steps: int, peak: float) -> float:
    """Cosine decay from ``peak`` at step 0 to zero at ``total_steps``; no warmup."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step >= total_steps:
        return 0.0
    return peak * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def assemble_batch(
    corpus: list[AnnotatedSentence],
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    cfg: RunConfig,
    rng: random.Random,
) -> TrainingBatch:
    """Sample sentences without replacement, pick one anchor mention per
    sentence (rejecting concept collisions), corrupt for MLM, and attach the
    anchor's capped subgraph."""
    b = cfg.trainer.batch_size
    max_len = cfg.model.max_len
    need_edges = cfg.model.pathway in ("distmult", "transe")
    num_specials = vocab.num_specials

    order = rng.sample(range(len(corpus)), len(corpus))
    used: set[str] = set()
    rows: list[tuple[list[int], list[int], tuple[int, int], str, Subgraph]] = []
    for idx in order:
        if len(rows) == b:
            break
        ids, mentions = encode(corpus[idx], vocab, max_len)
        if not any(t >= num_specials for t in ids):
            continue
        candidates = [
            m for m in mentions
            if m[2] not in used and (not need_edges or kg.indegree(m[2]) > 0)
        ]
        if not candidates:
            continue
        start, end, cid = candidates[rng.randrange(len(candidates))]
        masked = apply_mlm_mask(ids, vocab, rng, cfg.objective.select_ratio)
        sg = local_subgraph(kg, cid, cfg.trainer.neighbor_cap, rng)
        rows.append((masked.ids, masked.labels, (start, end), cid, sg))
        used.add(cid)
    if len(rows) < b:
        raise ConfigurationError(
            f"could only assemble {len(rows)} of {b} batch items; the corpus "
            f"needs >= {b} sentences covering >= {b} distinct anchorable concepts"
        )

    width = max(len(r[0]) for r in rows)
    ids = torch.full((b, width), 0, dtype=torch.long)
    mask = torch.zeros(b, width, dtype=torch.bool)
    labels = torch.full((b, width), IGNORE_INDEX, dtype=torch.long)
    for i, (row_ids, row_labels, _, _, _) in enumerate(rows):
        n = len(row_ids)
        ids[i, :n] = torch.as_tensor(row_ids)
        labels[i, :n] = torch.as_tensor(row_labels)
        mask[i, :n] = True
    return TrainingBatch(
        ids=ids,
        attention_mask=mask,
        labels=labels,
        spans=[r[2] for r in rows],
        concepts=[r[3] for r in rows],
        subgraphs=[r[4] for r in rows],
    )


def compute_losses(
    model: AlignmentModel,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    batch: TrainingBatch,
    cfg: RunConfig,
    rng: random.Random,
) -> dict:
    """Forward both encoders and evaluate the combined objective.

    The entity embedding is pooled from the corrupted sequence, so the
    alignment objective sees the same masked view as the MLM head.
    """
    obj = cfg.objective
    hidden = model.text_encoder(batch.ids, batch.attention_mask)

    l_mlm = hidden.new_zeros(())
    if obj.mlm_weight != 0.0:
        flat = hidden.reshape(-1, hidden.shape[-1])
        flat_labels = batch.labels.reshape(-1)
        keep = flat_labels != IGNORE_INDEX
        logits = model.text_encoder.mlm_logits(flat[keep])
        l_mlm, _ = mlm_loss(logits, flat_labels[keep])

    l_align = hidden.new_zeros(())
    xmodal_top1 = None
    if obj.align != "none" and obj.align_weight != 0.0:
        entity = model.entity_embed(hidden, batch.spans)
        graph = model.graph_embed(
            kg, vocab, batch.subgraphs, rng, freeze_node_init=cfg.trainer.freeze_node_init
        )
        if obj.align == "infonce":
            l_align = infonce_align_loss(entity, graph, obj.tau, obj.negatives_mode)
        elif obj.align == "ms":
            l_align = ms_align_loss(entity, graph, obj.ms_alpha, obj.ms_beta, obj.ms_epsilon)
        elif obj.align == "classification":
            l_align = classification_align_loss(entity, graph, model.classifier, rng)
        with torch.no_grad():
            en = torch.nn.functional.normalize(entity, dim=1)
            gn = torch.nn.functional.normalize(graph, dim=1)
            hits = (en @ gn.t()).argmax(dim=1) == torch.arange(len(batch))
            xmodal_top1 = float(hits.to(torch.float32).mean())

    loss = total_loss(l_mlm, l_align, obj.align_weight, obj.mlm_weight)
    return {"loss": loss, "loss_mlm": l_mlm, "loss_align": l_align, "xmodal_top1": xmodal_top1}


def make_optimizer(model: AlignmentModel, cfg: RunConfig) -> torch.optim.Optimizer:
    """AdamW over exactly two disjoint parameter groups (LM vs everything
    else). Weight decay is applied manually in train_step so that biases and
    norm parameters are exempt within a group."""
    groups = [
        {"params": model.lm_parameters(), "lr": cfg.trainer.lm_lr, "name": "lm"},
        {"params": model.other_parameters(), "lr": cfg.trainer.other_lr, "name": "other"},
    ]
    return torch.optim.AdamW(groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)


def train_step(
    model: AlignmentModel,
    optimizer: torch.optim.Optimizer,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    batch: TrainingBatch,
    cfg: RunConfig,
    rng: random.Random,
    step_index: int,
) -> dict:
    """One optimizer update; returns the metrics record for this step."""
    out = compute_losses(model, kg, vocab, batch, cfg, rng)
    loss = out["loss"]
    if not bool(torch.isfinite(loss.detach())):
        raise NumericalError(f"non-finite loss at step {step_index + 1}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()

    lr_lm = lr_at(step_index, cfg.trainer.steps, cfg.trainer.lm_lr)
    lr_other = lr_at(step_index, cfg.trainer.steps, cfg.trainer.other_lr)
    decay = cfg.trainer.weight_decay
    for group in optimizer.param_groups:
        group["lr"] = lr_lm if group["name"] == "lm" else lr_other
        if decay:
            for p in group["params"]:
                # decoupled decay on matrix-shaped params only, skipping
                # params outside the current gradient path
                if p.grad is not None and p.dim() >= 2:
                    p.data.mul_(1.0 - group["lr"] * decay)
    optimizer.step()

    return {
        "step": step_index + 1,
        "loss_mlm": float(out["loss_mlm"].detach()),
        "loss_align": float(out["loss_align"].detach()),
        "loss": float(loss.detach()),
        "lr_lm": lr_lm,
        "lr_other": lr_other,
        "xmodal_top1": out["xmodal_top1"],
    }


@dataclass
class TrainingData:
    kg: KnowledgeGraph
    corpus: list[AnnotatedSentence]
    vocab: Vocabulary


def load_training_data(cfg: RunConfig, rng: random.Random) -> TrainingData:
    """Load and validate all inputs; the corpus is concept-balanced first."""
    data = cfg.data
    relations_path = data.resolve("relations")
    kg = load_kg(
        data.resolve("triples"),
        data.resolve("synonyms"),
        relations_path if relations_path.exists() else None,
    )
    corpus = load_corpus(data.resolve("corpus"))
    corpus = balanced_sample(corpus, data.per_concept_cap, rng)
    vocab = build_vocab(corpus, kg, data.min_freq)
    _check_coverage(corpus, kg, cfg)
    return TrainingData(kg=kg, corpus=corpus, vocab=vocab)


def _check_coverage(corpus, kg: KnowledgeGraph, cfg: RunConfig) -> None:
    need_edges = cfg.model.pathway in ("distmult", "transe")
    anchorable = set()
    for sent in corpus:
        for _, _, cid in sent.mentions:
            if cid in kg.nodes and (not need_edges or kg.indegree(cid) > 0):
                anchorable.add(cid)
    b = cfg.trainer.batch_size
    if len(corpus) < b or len(anchorable) < b:
        raise ConfigurationError(
            f"corpus has {len(corpus)} sentences over {len(anchorable)} anchorable "
            f"concepts; batch size {b} needs at least that many of each"
        )


@dataclass
class PretrainResult:
    checkpoint_path: Path
    metrics_path: Path
    final_metrics: dict | None


def pretrain(cfg: RunConfig, resume_from=None) -> PretrainResult:
    """Run the pretraining loop and write periodic plus final checkpoints.

    ``resume_from`` restores parameters, optimizer moments, and the data-RNG
    state from a mid-run checkpoint and continues to ``cfg.trainer.steps``.
    """
    cfg.validate()
    torch.set_num_threads(1)
    out_dir = Path(cfg.trainer.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"

    data_rng = random.Random(cfg.seed)
    data = load_training_data(cfg, data_rng)
    relation_ids = data.kg.relation_ids

    start_step = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        model = restore_model(ckpt)
        optimizer = make_optimizer(model, cfg)
        restore_optimizer(ckpt, model, optimizer)
        data_rng = restore_rng(ckpt)
        start_step = ckpt.step
        if start_step >= cfg.trainer.steps:
            raise ConfigurationError(
                f"checkpoint is at step {start_step}, nothing left of {cfg.trainer.steps}"
            )
        mode = "a" if metrics_path.exists() else "w"
    else:
        model = build_model(cfg, data.vocab, relation_ids)
        optimizer = make_optimizer(model, cfg)
        mode = "w"

    model.train()
    final_metrics = None
    with open(metrics_path, mode, encoding="utf-8") as metrics_fh:
        for step_index in range(start_step, cfg.trainer.steps):
            batch = assemble_batch(data.corpus, data.kg, data.vocab, cfg, data_rng)
            try:
                metrics = train_step(
                    model, optimizer, data.kg, data.vocab, batch, cfg, data_rng, step_index
                )
            except NumericalError as exc:
                diag_path = _write_diagnostics(out_dir, model, step_index, exc)
                raise NumericalError(str(exc), diagnostics_path=diag_path) from exc
            metrics_fh.write(json.dumps(metrics) + "\n")
            final_metrics = metrics
            step = step_index + 1
            if step % cfg.trainer.checkpoint_every == 0 and step < cfg.trainer.steps:
                save_training_checkpoint(
                    out_dir / f"step_{step:06d}.ckpt", model, cfg, data.vocab,
                    relation_ids, step, optimizer, data_rng,
                )
    final_path = save_training_checkpoint(
        out_dir / "final.ckpt", model, cfg, data.vocab, relation_ids,
        cfg.trainer.steps, optimizer, data_rng,
    )
    return PretrainResult(final_path, metrics_path, final_metrics)


def _write_diagnostics(out_dir: Path, model: AlignmentModel, step_index: int, exc) -> Path:
    snapshot = {
        "step": step_index + 1,
        "error": str(exc),
        "param_stats": {
            name: {
                "max_abs": float(p.detach().abs().max()) if p.numel() else 0.0,
                "finite": bool(torch.isfinite(p.detach()).all()),
            }
            for name, p in model.named_parameters()
        },
    }
    path = out_dir / "diagnostics.json"
    path.write_text(json.dumps(snapshot, indent=2))
    return path
