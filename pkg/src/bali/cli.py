"""Command-line entry points: gen-data | pretrain | eval | export.

Every command takes --config PATH (yaml), --profile, --seed, and dotted
overrides such as ``--trainer.batch_size 32``. Exit codes: 0 success,
2 usage/config/data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .config import RunConfig, load_config
from .errors import (
    BaliError,
    CheckpointError,
    ConfigurationError,
    IntegrityError,
    NumericalError,
    ParseError,
    ValidationError,
)
from .synthetic import GeneratorSpec, generate_synthetic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _split_overrides(extras: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extras):
        arg = extras[i]
        if not arg.startswith("--"):
            raise ConfigurationError(f"unexpected argument {arg!r}")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extras):
                raise ConfigurationError(f"override {arg!r} is missing a value")
            i += 1
            value = extras[i]
        if "." not in key:
            raise ConfigurationError(f"unknown flag --{key} (overrides use section.key)")
        overrides[key] = value
        i += 1
    return overrides


def _parse(argv):
    parser = argparse.ArgumentParser(
        prog="bali",
        description="Joint LM/KG alignment pretraining pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, extra in (
        ("gen-data", ()),
        ("pretrain", ("resume",)),
        ("eval", ("checkpoint",)),
        ("export", ("checkpoint", "out")),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="yaml config path")
        p.add_argument("--profile", default=None, choices=("tiny", "paper"))
        p.add_argument("--seed", type=int, default=None)
        if "resume" in extra:
            p.add_argument("--resume", default=None, help="checkpoint to resume from")
        if "checkpoint" in extra:
            p.add_argument("--checkpoint", required=True)
        if "out" in extra:
            p.add_argument("--out", default=None)
    return parser.parse_known_args(argv)


def cmd_gen_data(cfg: RunConfig) -> int:
    g = cfg.data.generator
    spec = GeneratorSpec(
        concepts=g.concepts,
        relations=g.relations,
        synonyms_per_concept=g.synonyms_per_concept,
        edges_per_node=g.edges_per_node,
        sentences_per_concept=g.sentences_per_concept,
        noise_rate=g.noise_rate,
        eval_mentions_per_concept=g.eval_mentions_per_concept,
    )
    out_dir = cfg.data.resolve("triples").parent
    files = generate_synthetic(spec, random.Random(cfg.seed), out_dir)
    print(f"wrote synthetic data to {out_dir}")
    for key, value in files.summary.items():
        print(f"  {key}: {value}")
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig, resume: str | None) -> int:
    from .trainer import pretrain

    result = pretrain(cfg, resume_from=resume)
    export_path = result.checkpoint_path.parent / "lm_export.ckpt"
    ckpt_io.export_lm(result.checkpoint_path, export_path)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"lm export:  {export_path}")
    print(f"metrics:    {result.metrics_path}")
    if result.final_metrics:
        print(f"final loss: {result.final_metrics['loss']:.4f}")
    return EXIT_OK


def cmd_eval(cfg_overrides: dict, checkpoint_path: str, seed: int | None) -> int:
    import torch

    from .corpus import load_corpus
    from .evaluation import (
        accuracy_at_k,
        cross_modal_recall,
        embed_dictionary,
        link_mentions,
        load_eval_mentions,
        masked_token_accuracy,
        write_report,
    )
    from .kg import load_kg
    from .model import build_model

    import copy

    import yaml

    torch.set_num_threads(1)
    ckpt = ckpt_io.load_checkpoint(checkpoint_path)
    # eval runs under the training config; data paths etc. may be overridden
    config_dict = copy.deepcopy(ckpt.config)
    for dotted, text in cfg_overrides.items():
        node = config_dict
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(text)
    cfg = RunConfig.from_dict(config_dict)
    if seed is not None:
        cfg.seed = seed
    train_hash = RunConfig.from_dict(ckpt.config).config_hash()

    vocab = ckpt.vocabulary()
    relations_path = cfg.data.resolve("relations")
    kg = load_kg(
        cfg.data.resolve("triples"),
        cfg.data.resolve("synonyms"),
        relations_path if relations_path.exists() else None,
    )
    mentions = load_eval_mentions(cfg.data.resolve("eval_mentions"))
    if cfg.eval.max_mentions:
        mentions = mentions[: cfg.eval.max_mentions]

    if ckpt.kind == "checkpoint":
        model = ckpt_io.restore_model(ckpt)
        enc = model.text_encoder
    else:
        _, _, enc = ckpt_io.restore_text_encoder(ckpt)
        model = None
        if cfg.model.pathway in ("textual", "linearized"):
            model = build_model(cfg, vocab, ckpt.relation_ids)
            model.text_encoder.load_state_dict(enc.state_dict())

    rng = random.Random(cfg.seed)
    index = embed_dictionary(enc, kg, vocab)
    max_k = max(cfg.eval.k)
    results = link_mentions(enc, index, mentions, vocab, max_k)
    metrics = []
    for k in cfg.eval.k:
        metrics.append(
            {"name": "zero_shot_accuracy", "k": k, "split": "heldout",
             "value": accuracy_at_k(results, k)}
        )
    if model is not None:
        recall = cross_modal_recall(
            model, kg, vocab, mentions, cfg, cfg.eval.recall_k, rng
        )
        metrics.append(
            {"name": "cross_modal_recall", "k": cfg.eval.recall_k,
             "split": "heldout", "value": recall}
        )
    else:
        print("note: LM-only artifact with a graph pathway; skipping cross-modal recall")
    corpus = load_corpus(cfg.data.resolve("corpus"))
    sample = corpus[: cfg.eval.mlm_sample] if cfg.eval.mlm_sample else corpus
    mlm_acc = masked_token_accuracy(
        enc, sample, vocab, rng, cfg.model.max_len, cfg.objective.select_ratio
    )
    metrics.append(
        {"name": "masked_token_accuracy", "k": None, "split": "train", "value": mlm_acc}
    )

    out_dir = Path(cfg.trainer.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_cfg = RunConfig.from_dict(ckpt.config)
    report_path = write_report(
        out_dir / "report.json", report_cfg, Path(checkpoint_path).name, metrics
    )
    assert report_cfg.config_hash() == train_hash
    print(f"report: {report_path}")
    for m in metrics:
        k = f"@{m['k']}" if m.get("k") else ""
        print(f"  {m['name']}{k} [{m['split']}] = {m['value']:.4f}")
    return EXIT_OK


def cmd_export(checkpoint_path: str, out: str | None) -> int:
    out_path = Path(out) if out else Path(checkpoint_path).with_name("lm_export.ckpt")
    ckpt_io.export_lm(checkpoint_path, out_path)
    print(f"lm export: {out_path}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args, extras = _parse(argv if argv is not None else sys.argv[1:])
        overrides = _split_overrides(extras)
        if args.command == "eval":
            return cmd_eval(overrides, args.checkpoint, args.seed)
        cfg = load_config(
            config_path=args.config,
            profile=args.profile,
            overrides=overrides,
            seed=args.seed,
        )
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "pretrain":
            return cmd_pretrain(cfg, args.resume)
        if args.command == "export":
            return cmd_export(args.checkpoint, args.out)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if exc.diagnostics_path:
            print(f"diagnostics: {exc.diagnostics_path}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (
        ConfigurationError,
        ValidationError,
        ParseError,
        IntegrityError,
        CheckpointError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BaliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint() -> None:
    sys.exit(main())
