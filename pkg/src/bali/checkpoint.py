"""Versioned single-file checkpoint container.

Layout: an 8-byte magic, a u32 format version, a u64 header length, a JSON
header, then the raw little-endian tensor bytes back to back. The header
carries the config snapshot, the vocabulary, the relation-id row order, named
tensor descriptors (shape + dtype + offset), optimizer bookkeeping, and the
data-RNG state, so a run can resume bit-exactly and the LM can be exported by
filtering tensors.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .corpus import Vocabulary
from .errors import CheckpointError
from .model import AlignmentModel, build_model

MAGIC = b"BALICKPT"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass
class Checkpoint:
    kind: str
    config: dict
    vocab_tokens: list[str]
    relation_ids: list[str]
    step: int
    tensors: dict[str, np.ndarray]
    optimizer_steps: dict[str, float] = field(default_factory=dict)
    rng_state: list | None = None

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.from_token_list(self.vocab_tokens)


def _dtype_name(arr: np.ndarray) -> str:
    for name, code in _DTYPES.items():
        if arr.dtype == np.dtype(code):
            return name
    raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")


def write_container(
    path,
    kind: str,
    config: dict,
    vocab_tokens: list[str],
    relation_ids: list[str],
    step: int,
    tensors: dict[str, np.ndarray],
    optimizer_steps: dict[str, float] | None = None,
    rng_state=None,
) -> Path:
    path = Path(path)
    descriptors = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float32:
            arr = arr.astype("<f4", copy=False)
        elif arr.dtype == np.float64:
            arr = arr.astype("<f8", copy=False)
        raw = arr.tobytes()
        descriptors.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": _dtype_name(arr),
            "offset": offset,
            "nbytes": len(raw),
        })
        offset += len(raw)
        blobs.append(raw)
    header = {
        "kind": kind,
        "config": config,
        "vocab": vocab_tokens,
        "relation_ids": relation_ids,
        "step": step,
        "tensors": descriptors,
        "optimizer_steps": optimizer_steps or {},
        "rng": rng_state,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint container (bad magic)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if pos + header_len > len(data):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    blob_start = pos + header_len
    tensors: dict[str, np.ndarray] = {}
    for desc in header["tensors"]:
        start = blob_start + desc["offset"]
        end = start + desc["nbytes"]
        if end > len(data):
            raise CheckpointError(f"truncated tensor {desc['name']!r}")
        arr = np.frombuffer(data[start:end], dtype=_DTYPES[desc["dtype"]])
        tensors[desc["name"]] = arr.reshape(desc["shape"]).copy()
    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        vocab_tokens=header["vocab"],
        relation_ids=header.get("relation_ids", []),
        step=header["step"],
        tensors=tensors,
        optimizer_steps=header.get("optimizer_steps", {}),
        rng_state=header.get("rng"),
    )


def save_training_checkpoint(
    path,
    model: AlignmentModel,
    cfg: RunConfig,
    vocab: Vocabulary,
    relation_ids: list[str],
    step: int,
    optimizer: torch.optim.Optimizer | None = None,
    data_rng: random.Random | None = None,
) -> Path:
    tensors = {
        name: param.detach().cpu().numpy()
        for name, param in model.state_dict().items()
    }
    optimizer_steps: dict[str, float] = {}
    if optimizer is not None:
        name_of = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                pname = name_of[id(p)]
                tensors[f"optim.{pname}.exp_avg"] = state["exp_avg"].cpu().numpy()
                tensors[f"optim.{pname}.exp_avg_sq"] = state["exp_avg_sq"].cpu().numpy()
                optimizer_steps[pname] = float(state["step"])
    rng_state = None
    if data_rng is not None:
        version, internal, gauss = data_rng.getstate()
        rng_state = [version, list(internal), gauss]
    return write_container(
        path,
        kind="checkpoint",
        config=cfg.to_dict(),
        vocab_tokens=list(vocab.tokens),
        relation_ids=list(relation_ids),
        step=step,
        tensors=tensors,
        optimizer_steps=optimizer_steps,
        rng_state=rng_state,
    )


def restore_model(ckpt: Checkpoint, dtype: torch.dtype = torch.float32) -> AlignmentModel:
    """Rebuild the full model from a training checkpoint (exact parameters)."""
    if ckpt.kind != "checkpoint":
        raise CheckpointError(f"container kind {ckpt.kind!r} is not a full checkpoint")
    cfg = ckpt.run_config()
    vocab = ckpt.vocabulary()
    model = build_model(cfg, vocab, ckpt.relation_ids, dtype=dtype)
    state = {
        name: torch.from_numpy(ckpt.tensors[name]).to(dtype)
        for name in model.state_dict()
        if name in ckpt.tensors
    }
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {sorted(missing)}")
    model.load_state_dict(state)
    return model


def restore_optimizer(
    ckpt: Checkpoint, model: AlignmentModel, optimizer: torch.optim.Optimizer
) -> None:
    params = dict(model.named_parameters())
    for pname, step in ckpt.optimizer_steps.items():
        p = params[pname]
        optimizer.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(ckpt.tensors[f"optim.{pname}.exp_avg"]).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(ckpt.tensors[f"optim.{pname}.exp_avg_sq"]).to(p.dtype),
        }


def restore_rng(ckpt: Checkpoint) -> random.Random:
    rng = random.Random()
    if ckpt.rng_state is None:
        raise CheckpointError("checkpoint carries no RNG state; cannot resume")
    version, internal, gauss = ckpt.rng_state
    rng.setstate((version, tuple(internal), gauss))
    return rng


LM_PREFIX = "text_encoder."


def export_lm(checkpoint_path, out_path) -> Path:
    """Write the LM-only artifact: text-encoder tensors, vocab, and config.

    Graph-encoder, relation, pooler, and classifier parameters as well as
    optimizer and RNG state are dropped. Retained tensors are byte-identical
    to the source checkpoint.
    """
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.kind != "checkpoint":
        raise CheckpointError("can only export from a full training checkpoint")
    kept = {n: arr for n, arr in ckpt.tensors.items() if n.startswith(LM_PREFIX)}
    if not kept:
        raise CheckpointError("checkpoint holds no text-encoder tensors")
    return write_container(
        out_path,
        kind="lm-export",
        config=ckpt.config,
        vocab_tokens=ckpt.vocab_tokens,
        relation_ids=ckpt.relation_ids,
        step=ckpt.step,
        tensors=kept,
    )


def restore_text_encoder(ckpt: Checkpoint, dtype: torch.dtype = torch.float32):
    """Text encoder + config + vocab from either container kind."""
    from .encoders import TextEncoder

    cfg = ckpt.run_config()
    vocab = ckpt.vocabulary()
    m = cfg.model
    enc = TextEncoder(
        vocab_size=len(vocab), dim=m.dim, num_layers=m.lm_layers, heads=m.heads,
        max_len=m.max_len, ffn_mult=m.ffn_mult, pre_norm=m.pre_norm,
        tie_mlm_head=m.tie_mlm_head, dtype=dtype,
    )
    state = {}
    for name in enc.state_dict():
        full = LM_PREFIX + name
        if full not in ckpt.tensors:
            raise CheckpointError(f"container is missing tensor {full!r}")
        state[name] = torch.from_numpy(ckpt.tensors[full]).to(dtype)
    enc.load_state_dict(state)
    return cfg, vocab, enc
