"""Query computation trees, their text syntax, and exact set evaluation.

Syntax (prefix s-expressions)::

    query  := node
    node   := anchor | "(" op ")"
    anchor := '"' name '"'            backslash escapes '"' and '\\'
    op     := "p" rel node            projection
            | "np" rel node           negated projection
            | "n" node                set complement
            | "i" node node+          intersection
            | "u" node node+          union
    rel    := bare token

Example: ``(i (p r2 (p r1 "a")) (np r3 "b"))`` is the pin shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Union as TypingUnion

import numpy as np

from .kg import KnowledgeGraph, Vocab

SHAPES = ("1p", "2p", "3p", "2i", "2u", "pin")


class QueryError(ValueError):
    pass


class QuerySyntaxError(QueryError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class QueryArityError(QueryError):
    pass


class QueryNameError(QueryError):
    pass


@dataclass(frozen=True, eq=True)
class Anchor:
    entity: int


@dataclass(frozen=True, eq=True)
class Project:
    relation: int
    child: "QueryTree"


@dataclass(frozen=True, eq=True)
class NegProject:
    relation: int
    child: "QueryTree"


@dataclass(frozen=True, eq=True)
class Intersect:
    children: tuple["QueryTree", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise QueryArityError("intersection needs at least 2 operands")


@dataclass(frozen=True, eq=True)
class Union:
    children: tuple["QueryTree", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise QueryArityError("union needs at least 2 operands")


@dataclass(frozen=True, eq=True)
class Complement:
    child: "QueryTree"


QueryTree = TypingUnion[Anchor, Project, NegProject, Intersect, Union, Complement]


def children(node: QueryTree) -> tuple[QueryTree, ...]:
    if isinstance(node, Anchor):
        return ()
    if isinstance(node, (Intersect, Union)):
        return node.children
    return (node.child,)


def walk(node: QueryTree) -> Iterator[QueryTree]:
    """Post-order traversal."""
    for c in children(node):
        yield from walk(c)
    yield node


def relations_in(tree: QueryTree) -> set[int]:
    return {n.relation for n in walk(tree) if isinstance(n, (Project, NegProject))}


def depth(tree: QueryTree) -> int:
    return 1 + max((depth(c) for c in children(tree)), default=0)


def count_variables(tree: QueryTree) -> int:
    """Existential variables: outputs of non-anchor subtrees fed into a relation."""
    return sum(1 for n in walk(tree)
               if isinstance(n, (Project, NegProject)) and not isinstance(n.child, Anchor))


# -- parsing ---------------------------------------------------------------

class _Token(NamedTuple):
    kind: str  # "(", ")", "str", "atom"
    value: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            tokens.append(_Token(c, c, i))
            i += 1
        elif c == '"':
            start = i
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise QuerySyntaxError("unterminated string", start)
                c = text[i]
                if c == "\\":
                    if i + 1 >= n:
                        raise QuerySyntaxError("dangling escape", i)
                    buf.append(text[i + 1])
                    i += 2
                elif c == '"':
                    i += 1
                    break
                else:
                    buf.append(c)
                    i += 1
            tokens.append(_Token("str", "".join(buf), start))
        else:
            start = i
            while i < n and not text[i].isspace() and text[i] not in '()"':
                i += 1
            tokens.append(_Token("atom", text[start:i], start))
    return tokens


class _Parser:
    def __init__(self, text: str, vocab: Vocab):
        self.tokens = _tokenize(text)
        self.i = 0
        self.end = len(text)
        self.vocab = vocab

    def peek(self) -> _Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self, what: str) -> _Token:
        tok = self.peek()
        if tok is None:
            raise QuerySyntaxError(f"unexpected end of input, expected {what}", self.end)
        self.i += 1
        return tok

    def node(self) -> QueryTree:
        tok = self.next("a node")
        if tok.kind == "str":
            if tok.value not in self.vocab.entity_ids:
                raise QueryNameError(f"unknown entity {tok.value!r} at position {tok.pos}")
            return Anchor(self.vocab.entity_ids[tok.value])
        if tok.kind != "(":
            raise QuerySyntaxError(f"expected '(' or quoted entity, got {tok.value!r}", tok.pos)
        op = self.next("an operator")
        if op.kind != "atom":
            raise QuerySyntaxError(f"expected operator, got {op.value!r}", op.pos)
        if op.value in ("p", "np"):
            rel = self.next("a relation")
            if rel.kind != "atom":
                raise QuerySyntaxError(f"expected relation name, got {rel.value!r}", rel.pos)
            if rel.value not in self.vocab.relation_ids:
                raise QueryNameError(f"unknown relation {rel.value!r} at position {rel.pos}")
            child = self.node()
            self.close(op)
            cls = Project if op.value == "p" else NegProject
            return cls(self.vocab.relation_ids[rel.value], child)
        if op.value == "n":
            child = self.node()
            self.close(op)
            return Complement(child)
        if op.value in ("i", "u"):
            kids = []
            while (tok := self.peek()) is not None and tok.kind != ")":
                kids.append(self.node())
            label = "intersection" if op.value == "i" else "union"
            if len(kids) < 2:
                raise QueryArityError(
                    f"{label} at position {op.pos} needs at least 2 operands, got {len(kids)}")
            self.close(op)
            return Intersect(tuple(kids)) if op.value == "i" else Union(tuple(kids))
        raise QuerySyntaxError(f"unknown operator {op.value!r}", op.pos)

    def close(self, op: _Token) -> None:
        tok = self.next(f"')' closing {op.value!r}")
        if tok.kind != ")":
            raise QueryArityError(
                f"too many operands for {op.value!r} at position {op.pos} "
                f"(unexpected {tok.value!r} at {tok.pos})")


def parse(text: str, vocab: Vocab) -> QueryTree:
    p = _Parser(text, vocab)
    tree = p.node()
    if (tok := p.peek()) is not None:
        raise QuerySyntaxError(f"trailing input {tok.value!r}", tok.pos)
    return tree


def _quote(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def render(tree: QueryTree, vocab: Vocab) -> str:
    if isinstance(tree, Anchor):
        return _quote(vocab.entities[tree.entity])
    if isinstance(tree, Project):
        return f"(p {vocab.relations[tree.relation]} {render(tree.child, vocab)})"
    if isinstance(tree, NegProject):
        return f"(np {vocab.relations[tree.relation]} {render(tree.child, vocab)})"
    if isinstance(tree, Complement):
        return f"(n {render(tree.child, vocab)})"
    op = "i" if isinstance(tree, Intersect) else "u"
    return f"({op} " + " ".join(render(c, vocab) for c in tree.children) + ")"


# -- exact evaluation --------------------------------------------------------

def traverse_answers(kg: KnowledgeGraph, tree: QueryTree) -> frozenset[int]:
    """Boolean answer set, evaluated bottom-up.

    ``NegProject(r, S)`` holds for ``x`` when some ``v`` in ``S`` has no
    ``r`` edge to ``x`` (the existential reading of ``not r(v, x)``); for a
    single anchor this is the complement of its ``r`` successors.
    """
    everything = frozenset(range(kg.n_entities))

    def ev(node: QueryTree) -> frozenset[int]:
        if isinstance(node, Anchor):
            return frozenset((node.entity,))
        if isinstance(node, Project):
            out: set[int] = set()
            for e in ev(node.child):
                out.update(kg.out_index.get((e, node.relation), ()))
            return frozenset(out)
        if isinstance(node, NegProject):
            src = ev(node.child)
            if not src:
                return frozenset()
            common = None
            for e in src:
                succ = set(kg.out_index.get((e, node.relation), ()))
                common = succ if common is None else common & succ
                if not common:
                    break
            return everything - common
        if isinstance(node, Complement):
            return everything - ev(node.child)
        sets = [ev(c) for c in node.children]
        if isinstance(node, Intersect):
            return frozenset.intersection(*sets)
        return frozenset.union(*sets)

    return ev(tree)


# -- sampling ----------------------------------------------------------------

class UnsatisfiableShapeError(RuntimeError):
    pass


def _random_triple(kg: KnowledgeGraph, rng: np.random.Generator):
    return kg.triples[int(rng.integers(len(kg.triples)))]


def _walk_path(kg: KnowledgeGraph, rng: np.random.Generator, hops: int):
    """Random walk of ``hops`` edges; returns (anchor, relations, endpoint) or None."""
    h, r, t = _random_triple(kg, rng)
    rels = [r]
    for _ in range(hops - 1):
        edges = kg.out_edges(t)
        if not edges:
            return None
        r, t = edges[int(rng.integers(len(edges)))]
        rels.append(r)
    return h, rels, t


def _chain(anchor: int, rels: list[int]) -> QueryTree:
    node: QueryTree = Anchor(anchor)
    for r in rels:
        node = Project(r, node)
    return node


def _try_shape(kg: KnowledgeGraph, shape: str, rng: np.random.Generator) -> QueryTree | None:
    if shape in ("1p", "2p", "3p"):
        path = _walk_path(kg, rng, int(shape[0]))
        return None if path is None else _chain(path[0], path[1])
    if shape == "2i":
        a, r1, x = _random_triple(kg, rng)
        others = [(b, r2) for b, r2 in kg.in_edges(x) if (b, r2) != (a, r1)]
        if not others:
            return None
        b, r2 = others[int(rng.integers(len(others)))]
        return Intersect((Project(r1, Anchor(a)), Project(r2, Anchor(b))))
    if shape == "2u":
        a, r1, _ = _random_triple(kg, rng)
        b, r2, _ = _random_triple(kg, rng)
        if (a, r1) == (b, r2):
            return None
        return Union((Project(r1, Anchor(a)), Project(r2, Anchor(b))))
    if shape == "pin":
        path = _walk_path(kg, rng, 2)
        if path is None:
            return None
        a, rels, x = path
        b, r3, _ = _random_triple(kg, rng)
        if x in kg.out_index.get((b, r3), ()):
            return None
        return Intersect((_chain(a, rels), NegProject(r3, Anchor(b))))
    raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")


def sample_query(kg: KnowledgeGraph, shape: str, seed, max_retries: int = 1000
                 ) -> tuple[QueryTree, frozenset[int]]:
    """Instantiate ``shape`` by random walks over ``kg``; gold answers come from ``kg``."""
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    if not kg.triples:
        raise UnsatisfiableShapeError("graph has no edges")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        tree = _try_shape(kg, shape, rng)
        if tree is None:
            continue
        gold = traverse_answers(kg, tree)
        if gold:
            return tree, gold
    raise UnsatisfiableShapeError(f"could not instantiate {shape} after {max_retries} attempts")


def shape_tree(shape: str, anchors: list[int], rels: list[int]) -> QueryTree:
    """Canonical tree for ``shape`` from explicit anchor and relation ids."""
    if shape in ("1p", "2p", "3p"):
        return _chain(anchors[0], rels[:int(shape[0])])
    if shape == "2i":
        return Intersect((Project(rels[0], Anchor(anchors[0])), Project(rels[1], Anchor(anchors[1]))))
    if shape == "2u":
        return Union((Project(rels[0], Anchor(anchors[0])), Project(rels[1], Anchor(anchors[1]))))
    if shape == "pin":
        return Intersect((_chain(anchors[0], rels[:2]), NegProject(rels[2], Anchor(anchors[1]))))
    raise ValueError(f"unknown shape {shape!r}")


def random_tree(rng: np.random.Generator, n_entities: int, n_relations: int,
                max_depth: int = 4, max_variables: int | None = None,
                complement: bool = True) -> QueryTree:
    """Random tree over all operators; retries until the variable budget holds."""
    def grow(d: int) -> QueryTree:
        if d <= 1 or rng.random() < 0.25:
            return Anchor(int(rng.integers(n_entities)))
        kinds = ["p", "p", "np", "i", "u"] + (["n"] if complement else [])
        k = kinds[int(rng.integers(len(kinds)))]
        if k == "p":
            return Project(int(rng.integers(n_relations)), grow(d - 1))
        if k == "np":
            return NegProject(int(rng.integers(n_relations)), grow(d - 1))
        if k == "n":
            return Complement(grow(d - 1))
        kids = tuple(grow(d - 1) for _ in range(int(rng.integers(2, 4))))
        return Intersect(kids) if k == "i" else Union(kids)

    while True:
        tree = grow(max_depth)
        if max_variables is None or count_variables(tree) <= max_variables:
            return tree


# -- workload files ------------------------------------------------------------

@dataclass(frozen=True)
class WorkloadItem:
    tree: QueryTree
    question: str
    gold: frozenset[int]
    shape: str = ""


def write_workload(path: str | Path, items: list[WorkloadItem], vocab: Vocab) -> None:
    """One line per query: DSL, natural-language question, comma-separated gold names."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            gold = ",".join(vocab.entities[e] for e in sorted(item.gold))
            fh.write(f"{render(item.tree, vocab)}\t{item.question}\t{gold}\n")


def read_workload(path: str | Path, vocab: Vocab) -> list[WorkloadItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) == 2:
                dsl, question, gold_text = fields[0], "", fields[1]
            elif len(fields) == 3:
                dsl, question, gold_text = fields
            else:
                raise QueryError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
            tree = parse(dsl, vocab)
            gold = frozenset(vocab.entity(n) for n in gold_text.split(",") if n)
            items.append(WorkloadItem(tree, question, gold, guess_shape(tree)))
    return items


def guess_shape(tree: QueryTree) -> str:
    """Name of the supported shape ``tree`` matches, or ``"other"``."""
    def chain_len(node) -> int | None:
        k = 0
        while isinstance(node, Project):
            node, k = node.child, k + 1
        return k if isinstance(node, Anchor) else None

    if isinstance(tree, Project):
        k = chain_len(tree)
        if k in (1, 2, 3):
            return f"{k}p"
    if isinstance(tree, (Intersect, Union)) and len(tree.children) == 2:
        a, b = tree.children
        if isinstance(tree, Union) and chain_len(a) == 1 and chain_len(b) == 1:
            return "2u"
        if isinstance(tree, Intersect):
            if chain_len(a) == 1 and chain_len(b) == 1:
                return "2i"
            if chain_len(a) == 2 and isinstance(b, NegProject) and isinstance(b.child, Anchor):
                return "pin"
    return "other"
