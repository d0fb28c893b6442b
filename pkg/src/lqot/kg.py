"""Knowledge graph storage, indexing and edge splitting.

Triples files are UTF-8 text with one ``head<TAB>relation<TAB>tail`` fact per
line. Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np


_WS = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Case-folded name with whitespace runs collapsed, for loose matching."""
    return _WS.sub(" ", name).strip().casefold()


class KGFormatError(ValueError):
    """Raised for malformed or empty triples files."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class Vocab:
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    entity_ids: dict[str, int] = field(init=False, repr=False, compare=False)
    relation_ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ent = {name: i for i, name in enumerate(self.entities)}
        rel = {name: i for i, name in enumerate(self.relations)}
        if len(ent) != len(self.entities):
            raise ValueError("duplicate entity names in vocabulary")
        if len(rel) != len(self.relations):
            raise ValueError("duplicate relation names in vocabulary")
        object.__setattr__(self, "entity_ids", ent)
        object.__setattr__(self, "relation_ids", rel)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def entity(self, name: str) -> int:
        try:
            return self.entity_ids[name]
        except KeyError:
            raise KeyError(f"unknown entity {name!r}") from None

    @cached_property
    def loose_entity_ids(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for i, name in enumerate(self.entities):
            out.setdefault(normalize_name(name), i)
        return out

    def relation(self, name: str) -> int:
        try:
            return self.relation_ids[name]
        except KeyError:
            raise KeyError(f"unknown relation {name!r}") from None


class KnowledgeGraph:
    """Immutable set of triples over a fixed vocabulary.

    ``out_index`` maps ``(head, relation)`` to the sorted tuple of tails and
    ``in_index`` maps ``(relation, tail)`` to the sorted tuple of heads.
    """

    def __init__(self, vocab: Vocab, triples: Iterable[Triple]):
        if vocab.n_entities < 1 or vocab.n_relations < 1:
            raise ValueError("knowledge graph needs at least one entity and one relation")
        seen: dict[Triple, None] = {}
        n_ent, n_rel = vocab.n_entities, vocab.n_relations
        for h, r, t in triples:
            if not (0 <= h < n_ent and 0 <= t < n_ent and 0 <= r < n_rel):
                raise ValueError(f"triple ({h}, {r}, {t}) out of vocabulary range")
            seen.setdefault(Triple(int(h), int(r), int(t)), None)
        self.vocab = vocab
        self.triples: tuple[Triple, ...] = tuple(seen)
        self._fact_set = frozenset(self.triples)

        out: dict[tuple[int, int], list[int]] = {}
        inc: dict[tuple[int, int], list[int]] = {}
        for h, r, t in self.triples:
            out.setdefault((h, r), []).append(t)
            inc.setdefault((r, t), []).append(h)
        self.out_index = {k: tuple(sorted(v)) for k, v in out.items()}
        self.in_index = {k: tuple(sorted(v)) for k, v in inc.items()}
        by_head: dict[int, list[tuple[int, int]]] = {}
        by_tail: dict[int, list[tuple[int, int]]] = {}
        for h, r, t in sorted(self.triples):
            by_head.setdefault(h, []).append((r, t))
            by_tail.setdefault(t, []).append((h, r))
        self._by_head = by_head
        self._by_tail = by_tail

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, triple) -> bool:
        return tuple(triple) in self._fact_set

    def __repr__(self) -> str:
        return (f"KnowledgeGraph(entities={self.vocab.n_entities}, "
                f"relations={self.vocab.n_relations}, triples={len(self.triples)})")

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    def neighbors(self, e: int, r: int) -> frozenset[int]:
        return frozenset(self.out_index.get((e, r), ()))

    def heads(self, r: int, t: int) -> tuple[int, ...]:
        return self.in_index.get((r, t), ())

    def out_edges(self, h: int) -> list[tuple[int, int]]:
        """``(relation, tail)`` pairs leaving ``h``, sorted."""
        return self._by_head.get(h, [])

    def in_edges(self, t: int) -> list[tuple[int, int]]:
        """``(head, relation)`` pairs entering ``t``, sorted."""
        return self._by_tail.get(t, [])

    def tail_count(self, h: int, r: int) -> int:
        return max(1, len(self.out_index.get((h, r), ())))

    def relation_triples(self, r: int) -> list[Triple]:
        return [tr for tr in self.triples if tr.relation == r]

    def with_triples(self, triples: Iterable[Triple]) -> "KnowledgeGraph":
        """Same vocabulary, different fact set."""
        return KnowledgeGraph(self.vocab, triples)

    def named_triples(self) -> list[tuple[str, str, str]]:
        ents, rels = self.vocab.entities, self.vocab.relations
        return [(ents[h], rels[r], ents[t]) for h, r, t in self.triples]


def neighbors(kg: KnowledgeGraph, e: int, r: int) -> frozenset[int]:
    return kg.neighbors(e, r)


def tail_count(kg: KnowledgeGraph, h: int, r: int) -> int:
    return kg.tail_count(h, r)


def from_named_triples(rows: Iterable[tuple[str, str, str]]) -> KnowledgeGraph:
    """Build a graph from name triples, assigning ids in first-seen order."""
    ents: dict[str, int] = {}
    rels: dict[str, int] = {}
    ids = []
    for h, r, t in rows:
        hi = ents.setdefault(h, len(ents))
        ri = rels.setdefault(r, len(rels))
        ti = ents.setdefault(t, len(ents))
        ids.append(Triple(hi, ri, ti))
    return KnowledgeGraph(Vocab(tuple(ents), tuple(rels)), ids)


def read_triple_rows(path: str | Path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3 or not all(fields):
                raise KGFormatError(
                    f"{path} line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def load_triples(path: str | Path) -> KnowledgeGraph:
    rows = read_triple_rows(path)
    if not rows:
        raise KGFormatError(f"{path}: no triples")
    return from_named_triples(rows)


def load_triples_with_vocab(path: str | Path, vocab: Vocab) -> KnowledgeGraph:
    """Load a triples file whose names must already exist in ``vocab``."""
    triples = []
    for h, r, t in read_triple_rows(path):
        try:
            triples.append(Triple(vocab.entity(h), vocab.relation(r), vocab.entity(t)))
        except KeyError as exc:
            raise KGFormatError(f"{path}: {exc.args[0]} (not in the vocabulary)") from None
    return KnowledgeGraph(vocab, triples)


def write_triples(path: str | Path, vocab: Vocab, triples: Iterable[Triple]) -> None:
    ents, rels = vocab.entities, vocab.relations
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


def split_edges(kg: KnowledgeGraph, keep_fraction: float, seed: int
                ) -> tuple[KnowledgeGraph, list[Triple]]:
    """Keep ``ceil(keep_fraction * |L|)`` uniformly sampled triples.

    The vocabulary is shared with ``kg``; entities left without edges stay in it.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    n = len(kg.triples)
    n_keep = min(n, math.ceil(keep_fraction * n))
    rng = np.random.default_rng(seed)
    keep = np.zeros(n, dtype=bool)
    keep[rng.permutation(n)[:n_keep]] = True
    train = [tr for tr, k in zip(kg.triples, keep) if k]
    removed = [tr for tr, k in zip(kg.triples, keep) if not k]
    return kg.with_triples(train), removed


def synthetic_kg(n_entities: int = 200, n_relations: int = 5, n_edges: int = 800,
                 n_clusters: int = 10, noise: float = 0.1, seed: int = 0) -> KnowledgeGraph:
    """Random clustered graph: relation r mostly links cluster c to cluster c + r + 1.

    The cluster structure gives the embedding model something to generalise
    from when half the edges are removed.
    """
    rng = np.random.default_rng(seed)
    cluster = np.arange(n_entities) % n_clusters
    members = [np.flatnonzero(cluster == c) for c in range(n_clusters)]
    facts: dict[Triple, None] = {}
    max_facts = n_entities * n_entities * n_relations
    while len(facts) < min(n_edges, max_facts):
        h = int(rng.integers(n_entities))
        r = int(rng.integers(n_relations))
        if rng.random() < noise:
            t = int(rng.integers(n_entities))
        else:
            target = (cluster[h] + r + 1) % n_clusters
            t = int(rng.choice(members[target]))
        facts.setdefault(Triple(h, r, t), None)
    vocab = Vocab(tuple(f"e{i}" for i in range(n_entities)),
                  tuple(f"r{i}" for i in range(n_relations)))
    return KnowledgeGraph(vocab, facts)
