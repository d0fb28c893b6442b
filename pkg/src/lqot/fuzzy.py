"""Product t-norm execution of query trees over sparse relation matrices.

Fuzzy vectors are plain float64 numpy arrays of length ``|E|`` with values
in [0, 1]. Existential variables are aggregated with ``max``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .adjacency import SparseRelationMatrix
from .kg import Vocab
from .query import (Anchor, Complement, Intersect, NegProject, Project, QueryTree, Union,
                    relations_in)

Hook = Callable[[QueryTree, np.ndarray, Sequence[np.ndarray]], "np.ndarray | None"]


class MissingMatrixError(KeyError):
    pass


def t_norm(a, b):
    return a * b


def t_conorm(a, b):
    return 1.0 - (1.0 - a) * (1.0 - b)


def negator(x):
    return 1.0 - x


def one_hot(e: int, n: int) -> np.ndarray:
    if not 0 <= e < n:
        raise IndexError(f"entity {e} out of range for size {n}")
    v = np.zeros(n)
    v[e] = 1.0
    return v


def _active(t: np.ndarray) -> np.ndarray:
    return np.flatnonzero(t > 0)


def project(t: np.ndarray, m: SparseRelationMatrix) -> np.ndarray:
    """``out[j] = max_i t[i] * M[i, j]``."""
    if len(t) != m.n:
        raise ValueError(f"vector length {len(t)} != matrix size {m.n}")
    out = np.zeros(m.n)
    indptr, indices, data = m.csr.indptr, m.csr.indices, m.csr.data
    for i in _active(t):
        lo, hi = indptr[i], indptr[i + 1]
        if lo == hi:
            continue
        cols = indices[lo:hi]
        np.maximum.at(out, cols, t[i] * data[lo:hi])
    return out


def neg_project(t: np.ndarray, m: SparseRelationMatrix) -> np.ndarray:
    """``out[j] = max_i t[i] * (1 - M[i, j])`` without materialising ``1 - M``.

    Absent entries contribute ``t[i]`` itself. Rows are visited in decreasing
    ``t`` order so a column is settled by the first row that stores nothing
    for it; only columns stored in every row visited so far stay open.
    """
    if len(t) != m.n:
        raise ValueError(f"vector length {len(t)} != matrix size {m.n}")
    n = m.n
    indptr, indices, data = m.csr.indptr, m.csr.indices, m.csr.data
    active = _active(t)
    background = np.zeros(n)
    stored = np.zeros(n)
    open_cols = np.ones(n, dtype=bool)
    n_open = n
    for i in active[np.argsort(-t[active], kind="stable")]:
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        np.maximum.at(stored, cols, t[i] * (1.0 - data[lo:hi]))
        if n_open:
            in_row = np.zeros(n, dtype=bool)
            in_row[cols] = True
            settled = open_cols & ~in_row
            background[settled] = t[i]
            open_cols &= in_row
            n_open = int(open_cols.sum())
    return np.maximum(background, stored)


def intersect(ts: Sequence[np.ndarray]) -> np.ndarray:
    if len(ts) < 2:
        raise ValueError("intersection needs at least 2 operands")
    out = ts[0].copy()
    for t in ts[1:]:
        out = t_norm(out, t)
    return out


def union(ts: Sequence[np.ndarray]) -> np.ndarray:
    """``1 - prod(1 - t_i)``."""
    if len(ts) < 2:
        raise ValueError("union needs at least 2 operands")
    rest = negator(ts[0])
    for t in ts[1:]:
        rest = rest * negator(t)
    return negator(rest)


def complement(t: np.ndarray) -> np.ndarray:
    return negator(t)


@dataclass(frozen=True)
class TraceEntry:
    node: QueryTree
    vector: np.ndarray


def execute(tree: QueryTree, matrices: Mapping[int, SparseRelationMatrix],
            n: int | None = None, hook: Hook | None = None,
            trace: list[TraceEntry] | None = None) -> np.ndarray:
    """Evaluate ``tree`` bottom-up.

    ``hook(node, vector, child_vectors)`` runs after every node and may return
    a replacement vector. If ``trace`` is given, one entry per node is
    appended in post-order with the (possibly replaced) vector.
    """
    missing = relations_in(tree) - set(matrices)
    if missing:
        raise MissingMatrixError(f"no matrix for relation(s) {sorted(missing)}")
    if n is None:
        if not matrices:
            raise ValueError("entity count unknown: pass n or at least one matrix")
        n = next(iter(matrices.values())).n

    def ev(node: QueryTree) -> np.ndarray:
        if isinstance(node, Anchor):
            kids = []
            vec = one_hot(node.entity, n)
        elif isinstance(node, Project):
            kids = [ev(node.child)]
            vec = project(kids[0], matrices[node.relation])
        elif isinstance(node, NegProject):
            kids = [ev(node.child)]
            vec = neg_project(kids[0], matrices[node.relation])
        elif isinstance(node, Complement):
            kids = [ev(node.child)]
            vec = complement(kids[0])
        elif isinstance(node, Intersect):
            kids = [ev(c) for c in node.children]
            vec = intersect(kids)
        elif isinstance(node, Union):
            kids = [ev(c) for c in node.children]
            vec = union(kids)
        else:
            raise TypeError(f"not a query node: {node!r}")
        if hook is not None:
            replaced = hook(node, vec, kids)
            if replaced is not None:
                if replaced.shape != vec.shape:
                    raise ValueError("hook returned a vector of the wrong length")
                vec = replaced
        if trace is not None:
            trace.append(TraceEntry(node, vec))
        return vec

    return ev(tree)


def ranking(t: np.ndarray, k: int | None = None) -> np.ndarray:
    """Entity ids by descending score, ties by ascending id."""
    order = np.lexsort((np.arange(len(t)), -t))
    return order if k is None else order[:k]


def top_k(t: np.ndarray, k: int, vocab: Vocab) -> list[tuple[str, float]]:
    if k < 1:
        raise ValueError("k must be at least 1")
    return [(vocab.entities[i], float(t[i])) for i in ranking(t, k)]


def _describe(node: QueryTree, vocab: Vocab) -> tuple[str, str]:
    if isinstance(node, Anchor):
        return "anchor", vocab.entities[node.entity]
    if isinstance(node, (Project, NegProject)):
        kind = "project" if isinstance(node, Project) else "neg_project"
        return kind, vocab.relations[node.relation]
    if isinstance(node, Complement):
        return "complement", "-"
    kind = "intersect" if isinstance(node, Intersect) else "union"
    return kind, str(len(node.children))


def format_trace(trace: Sequence[TraceEntry], vocab: Vocab, k: int = 10) -> str:
    """One line per node, post-order::

        <index> TAB <kind> TAB <relation|entity|arity> TAB <name>=<score> ...

    with the top ``k`` entities and scores printed to 6 decimals.
    """
    lines = []
    for idx, entry in enumerate(trace):
        kind, detail = _describe(entry.node, vocab)
        top = " ".join(f"{name}={score:.6f}" for name, score in top_k(entry.vector, k, vocab))
        lines.append(f"{idx}\t{kind}\t{detail}\t{top}")
    return "\n".join(lines)
