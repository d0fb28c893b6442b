"""Calibrated relation matrices built from ComplEx scores and observed edges.

Each row of ``M_r`` is a softmax over tail scores scaled by the number of
known tails, capped at ``1 - delta``; observed training edges are pinned to 1.
Only observed entries and the ``top_k`` best predictions per row are stored.

Matrix files come in two variants, both versioned.

Text (``.adj``)::

    # lqot-adjacency v1
    relation<TAB>name
    n<TAB>entity count
    entries<TAB>stored entry count
    row<TAB>col<TAB>value        (one line per entry, sorted by row then col)

Binary (``.adjb``, little endian): magic ``b"LQOTADJ"``, version byte,
uint32 name length, UTF-8 name, int64 n, int64 count, then int64 rows,
int64 cols and float64 values, each ``count`` long.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .kg import KnowledgeGraph, Vocab
from .kge import ComplExModel, score_rows

FORMAT_VERSION = 1
BINARY_MAGIC = b"LQOTADJ"
TEXT_HEADER = f"# lqot-adjacency v{FORMAT_VERSION}"


@dataclass(frozen=True)
class AdjacencyConfig:
    delta: float = 1e-4
    top_k: int = 50
    floor: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.floor < 0:
            raise ValueError("floor must be non-negative")


class SparseRelationMatrix:
    """Row-compressed ``n x n`` matrix with values in (0, 1]; absent entries are 0."""

    def __init__(self, relation: int, n: int, rows, cols, values, name: str | None = None):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if len(rows) and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n):
            raise ValueError("matrix index out of range")
        if np.any(values <= 0) or np.any(values > 1):
            raise ValueError("stored values must lie in (0, 1]")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if len(rows) > 1 and np.any((rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])):
            raise ValueError("duplicate (row, col) entries")
        self.relation = relation
        self.name = name if name is not None else str(relation)
        self.n = n
        # build CSR by hand so explicit values are never summed or dropped
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        self.csr = sp.csr_matrix((values, cols, np.cumsum(indptr)), shape=(n, n))

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.csr.indptr[i], self.csr.indptr[i + 1]
        return self.csr.indices[lo:hi], self.csr.data[lo:hi]

    def entry(self, i: int, j: int) -> float:
        cols, vals = self.row(i)
        k = np.searchsorted(cols, j)
        if k < len(cols) and cols[k] == j:
            return float(vals[k])
        return 0.0

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.n), np.diff(self.csr.indptr))
        return rows, self.csr.indices.astype(np.int64), self.csr.data.copy()

    def dense(self) -> np.ndarray:
        return self.csr.toarray()

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseRelationMatrix):
            return NotImplemented
        a, b = self.triplets(), other.triplets()
        return (self.n == other.n and self.name == other.name
                and all(np.array_equal(x, y) for x, y in zip(a, b)))

    def __repr__(self) -> str:
        return f"SparseRelationMatrix({self.name!r}, n={self.n}, nnz={self.nnz})"

    @classmethod
    def from_dense(cls, relation: int, dense: np.ndarray, name: str | None = None):
        rows, cols = np.nonzero(dense)
        return cls(relation, dense.shape[0], rows, cols, dense[rows, cols], name=name)


def calibrate_row(scores: np.ndarray, observed_tails: Iterable[int], n_t: int,
                  delta: float) -> np.ndarray:
    """``min(softmax(scores) * n_t, 1 - delta)`` with observed tails set to 1."""
    if n_t < 1:
        raise ValueError("n_t must be at least 1")
    scores = np.asarray(scores, dtype=np.float64)
    e = np.exp(scores - scores.max())
    out = np.minimum(e / e.sum() * n_t, 1.0 - delta)
    obs = list(observed_tails)
    if obs:
        out[obs] = 1.0
    return out


def _calibrate_block(scores: np.ndarray, n_t: np.ndarray, delta: float) -> np.ndarray:
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    return np.minimum(e / e.sum(axis=1, keepdims=True) * n_t[:, None], 1.0 - delta)


def build_matrix(model: ComplExModel, kg: KnowledgeGraph, r: int,
                 config: AdjacencyConfig = AdjacencyConfig(), chunk: int = 256
                 ) -> SparseRelationMatrix:
    if model.n_entities != kg.n_entities:
        raise ValueError("model and graph disagree on entity count")
    n = kg.n_entities
    k = min(config.top_k, n)
    rows_out, cols_out, vals_out = [], [], []
    for start in range(0, n, chunk):
        heads = np.arange(start, min(n, start + chunk))
        n_t = np.array([kg.tail_count(h, r) for h in heads], dtype=np.float64)
        probs = _calibrate_block(score_rows(model, heads, r), n_t, config.delta)
        for local, h in enumerate(heads):
            observed = np.asarray(kg.out_index.get((int(h), r), ()), dtype=np.int64)
            row = probs[local]
            row[observed] = -np.inf
            # stable sort keeps lower entity ids first among ties
            best = np.argsort(-row, kind="stable")[:k]
            best = best[(row[best] >= config.floor) & (row[best] > 0)]
            cols = np.concatenate([observed, best])
            vals = np.concatenate([np.ones(len(observed)), row[best]])
            rows_out.append(np.full(len(cols), h, dtype=np.int64))
            cols_out.append(cols)
            vals_out.append(vals)
    return SparseRelationMatrix(r, n, np.concatenate(rows_out), np.concatenate(cols_out),
                                np.concatenate(vals_out), name=kg.vocab.relations[r])


def build_all(model: ComplExModel, kg: KnowledgeGraph,
              config: AdjacencyConfig = AdjacencyConfig()) -> dict[int, SparseRelationMatrix]:
    return {r: build_matrix(model, kg, r, config) for r in range(kg.n_relations)}


def boolean_matrix(kg: KnowledgeGraph, r: int) -> SparseRelationMatrix:
    """The 0/1 adjacency matrix of relation ``r`` (all predicted entries dropped)."""
    triples = [(h, t) for h, rel, t in kg.triples if rel == r]
    rows = [h for h, _ in triples]
    cols = [t for _, t in triples]
    return SparseRelationMatrix(r, kg.n_entities, rows, cols, np.ones(len(rows)),
                                name=kg.vocab.relations[r])


def boolean_matrices(kg: KnowledgeGraph) -> dict[int, SparseRelationMatrix]:
    return {r: boolean_matrix(kg, r) for r in range(kg.n_relations)}


def entry(m: SparseRelationMatrix, i: int, j: int) -> float:
    return m.entry(i, j)


# -- serialization ---------------------------------------------------------

def write_matrix(m: SparseRelationMatrix, path: str | Path, binary: bool = False) -> None:
    rows, cols, vals = m.triplets()
    if binary:
        name = m.name.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<BI", FORMAT_VERSION, len(name)))
            fh.write(name)
            fh.write(struct.pack("<2q", m.n, len(vals)))
            fh.write(rows.astype("<i8").tobytes())
            fh.write(cols.astype("<i8").tobytes())
            fh.write(vals.astype("<f8").tobytes())
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{TEXT_HEADER}\nrelation\t{m.name}\nn\t{m.n}\nentries\t{len(vals)}\n")
        for i, j, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
            fh.write(f"{i}\t{j}\t{v!r}\n")


def read_matrix(path: str | Path, relation: int | None = None) -> SparseRelationMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(BINARY_MAGIC):
        off = len(BINARY_MAGIC)
        version, name_len = struct.unpack_from("<BI", raw, off)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported matrix version {version}")
        off += 5
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        n, count = struct.unpack_from("<2q", raw, off)
        off += 16
        rows = np.frombuffer(raw, "<i8", count, off)
        cols = np.frombuffer(raw, "<i8", count, off + 8 * count)
        vals = np.frombuffer(raw, "<f8", count, off + 16 * count)
        return SparseRelationMatrix(relation if relation is not None else -1, n,
                                    rows, cols, vals, name=name)

    lines = raw.decode("utf-8").splitlines()
    if not lines or lines[0] != TEXT_HEADER:
        raise ValueError(f"{path}: missing header {TEXT_HEADER!r}")
    header = {}
    for line in lines[1:4]:
        key, _, value = line.partition("\t")
        header[key] = value
    n, count = int(header["n"]), int(header["entries"])
    body = lines[4:]
    if len(body) != count:
        raise ValueError(f"{path}: expected {count} entries, found {len(body)}")
    rows, cols, vals = [], [], []
    for line in body:
        i, j, v = line.split("\t")
        rows.append(int(i))
        cols.append(int(j))
        vals.append(float(v))
    return SparseRelationMatrix(relation if relation is not None else -1, n,
                                rows, cols, vals, name=header["relation"])


def save_matrices(directory: str | Path, matrices: dict[int, SparseRelationMatrix],
                  binary: bool = False) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = ".adjb" if binary else ".adj"
    paths = []
    for r in sorted(matrices):
        p = directory / f"{r:04d}{suffix}"
        write_matrix(matrices[r], p, binary=binary)
        paths.append(p)
    return paths


def load_matrices(directory: str | Path, vocab: Vocab) -> dict[int, SparseRelationMatrix]:
    """Load every matrix file in ``directory``, keyed by relation id via ``vocab``."""
    out = {}
    for p in sorted(Path(directory).iterdir()):
        if p.suffix not in (".adj", ".adjb"):
            continue
        m = read_matrix(p)
        r = vocab.relation(m.name)
        if m.n != vocab.n_entities:
            raise ValueError(f"{p}: matrix size {m.n} != {vocab.n_entities} entities")
        m.relation = r
        out[r] = m
    return out
