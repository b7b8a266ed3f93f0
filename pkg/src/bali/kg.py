"""Knowledge-graph storage: loading, capped 1-hop subgraphs, synonym sampling,
and edge linearization into token strings.

Edges are directed triples ``(head, relation, tail)``. The local subgraph of a
concept consists of its *incoming* edges only; no reverse edges are added.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import IntegrityError, ParseError, UnknownConceptError

Triple = tuple[str, str, str]


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable knowledge graph.

    ``synonyms`` maps every node to a non-empty ordered tuple of names;
    ``relation_names`` has a surface string for every relation id used by an
    edge. ``incoming`` is an index from node id to the positions of its
    incoming edges inside ``edges`` (in edge-list order).
    """

    nodes: frozenset[str]
    synonyms: dict[str, tuple[str, ...]]
    edges: tuple[Triple, ...]
    relation_names: dict[str, str]
    incoming: dict[str, tuple[int, ...]]

    def in_edges(self, v: str) -> list[Triple]:
        if v not in self.nodes:
            raise UnknownConceptError(v)
        return [self.edges[i] for i in self.incoming.get(v, ())]

    def indegree(self, v: str) -> int:
        if v not in self.nodes:
            raise UnknownConceptError(v)
        return len(self.incoming.get(v, ()))

    @property
    def relation_ids(self) -> list[str]:
        return sorted({r for _, r, _ in self.edges})

    def validate(self) -> None:
        if set(self.synonyms) != set(self.nodes):
            raise IntegrityError("synonym table does not cover the node set exactly")
        for v, names in self.synonyms.items():
            if not names:
                raise IntegrityError(f"node {v!r} has no synonyms")
        seen = set()
        for h, r, t in self.edges:
            if h not in self.nodes or t not in self.nodes:
                raise IntegrityError(f"edge ({h!r}, {r!r}, {t!r}) references an unknown node")
            if r not in self.relation_names:
                raise IntegrityError(f"relation {r!r} has no surface string")
            if (h, r, t) in seen:
                raise IntegrityError(f"duplicate triple ({h!r}, {r!r}, {t!r})")
            seen.add((h, r, t))


@dataclass(frozen=True)
class Subgraph:
    """Capped 1-hop neighborhood of ``center``: incoming edges only.

    Edge order is the sampling order and is deterministic given the sampler
    seed.
    """

    center: str
    edges: tuple[Triple, ...]

    def __post_init__(self):
        for _, _, t in self.edges:
            if t != self.center:
                raise IntegrityError(f"subgraph edge tail {t!r} != center {self.center!r}")

    @property
    def neighbor_ids(self) -> set[str]:
        return {u for u, _, _ in self.edges}


def _iter_records(source, what: str) -> Iterator[tuple[int, dict]]:
    """Yield (line number, parsed record) from a path or an iterable of lines."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from _iter_records(fh, what)
        return
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed {what} record: {exc.msg}", lineno) from exc
        if not isinstance(rec, dict):
            raise ParseError(f"{what} record must be an object", lineno)
        yield lineno, rec


def _require(rec: dict, key: str, lineno: int, what: str):
    if key not in rec:
        raise ParseError(f"{what} record missing {key!r}", lineno)
    return rec[key]


def load_kg(
    triples_source,
    synonyms_source,
    relation_names_source=None,
) -> KnowledgeGraph:
    """Build a validated KnowledgeGraph from line-record streams.

    Duplicate triples are silently deduplicated. Relation ids with no entry in
    the (optional) relation-names source fall back to the raw id string.
    Edges referencing a node absent from the synonyms source raise
    IntegrityError.
    """
    synonyms: dict[str, tuple[str, ...]] = {}
    for lineno, rec in _iter_records(synonyms_source, "synonym"):
        cid = _require(rec, "id", lineno, "synonym")
        names = _require(rec, "names", lineno, "synonym")
        if not isinstance(cid, str) or not isinstance(names, list):
            raise ParseError("synonym record needs a string id and a list of names", lineno)
        names = [n for n in names if isinstance(n, str) and n.strip()]
        if not names:
            raise ParseError(f"concept {cid!r} has an empty name list", lineno)
        if cid in synonyms:
            merged = list(synonyms[cid]) + [n for n in names if n not in synonyms[cid]]
            synonyms[cid] = tuple(merged)
        else:
            synonyms[cid] = tuple(dict.fromkeys(names))

    relation_names: dict[str, str] = {}
    if relation_names_source is not None:
        for lineno, rec in _iter_records(relation_names_source, "relation"):
            rel = _require(rec, "rel", lineno, "relation")
            name = _require(rec, "name", lineno, "relation")
            if not isinstance(rel, str) or not isinstance(name, str):
                raise ParseError("relation record needs string 'rel' and 'name'", lineno)
            relation_names[rel] = name

    edges: list[Triple] = []
    seen: set[Triple] = set()
    for lineno, rec in _iter_records(triples_source, "triple"):
        h = _require(rec, "head", lineno, "triple")
        r = _require(rec, "rel", lineno, "triple")
        t = _require(rec, "tail", lineno, "triple")
        if not all(isinstance(x, str) for x in (h, r, t)):
            raise ParseError("triple fields must be strings", lineno)
        for endpoint in (h, t):
            if endpoint not in synonyms:
                raise IntegrityError(
                    f"line {lineno}: edge references node {endpoint!r} with no synonym entry"
                )
        triple = (h, r, t)
        if triple in seen:
            continue
        seen.add(triple)
        edges.append(triple)
        relation_names.setdefault(r, r)

    incoming: dict[str, list[int]] = {}
    for i, (_, _, t) in enumerate(edges):
        incoming.setdefault(t, []).append(i)

    kg = KnowledgeGraph(
        nodes=frozenset(synonyms),
        synonyms=synonyms,
        edges=tuple(edges),
        relation_names=relation_names,
        incoming={v: tuple(ix) for v, ix in incoming.items()},
    )
    kg.validate()
    return kg


def local_subgraph(
    kg: KnowledgeGraph, v: str, max_neighbors: int, rng: random.Random
) -> Subgraph:
    """Incoming edges of ``v``, uniformly subsampled without replacement down
    to ``max_neighbors`` when there are more than that."""
    if v not in kg.nodes:
        raise UnknownConceptError(v)
    if max_neighbors < 0:
        raise ValueError("max_neighbors must be >= 0")
    idx = kg.incoming.get(v, ())
    if len(idx) <= max_neighbors:
        chosen = list(idx)
    else:
        chosen = rng.sample(list(idx), max_neighbors)
    return Subgraph(center=v, edges=tuple(kg.edges[i] for i in chosen))


def sample_synonym(kg: KnowledgeGraph, v: str, rng: random.Random) -> str:
    """Uniform draw from the concept's synonym list."""
    if v not in kg.nodes:
        raise UnknownConceptError(v)
    return rng.choice(kg.synonyms[v])


def linearize(kg: KnowledgeGraph, sg: Subgraph, rng: random.Random) -> str:
    """Render a subgraph as a token string for the text encoder.

    The center name is sampled once and reused in every edge segment; each
    edge contributes "<neighbor name> <relation name> <center name> [SEP]".
    """
    center_name = sample_synonym(kg, sg.center, rng)
    parts = ["[CLS]", center_name, "[SEP]"]
    for u, r, _ in sg.edges:
        parts.extend([sample_synonym(kg, u, rng), kg.relation_names[r], center_name, "[SEP]"])
    return " ".join(parts)
