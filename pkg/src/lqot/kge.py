"""ComplEx embeddings trained with full-softmax cross-entropy.

Relation ``r`` has a reciprocal ``r + n_relations`` used only for the head
prediction task during training.

Checkpoint layout (little endian)::

    magic   6 bytes  b"LQOTCX"
    version 1 byte   (currently 1)
    header  4 x int64: n_entities, n_relations, dim, seed
    float64 arrays, row-major, in order:
        entity_re   (n_entities, dim)
        entity_im   (n_entities, dim)
        relation_re (2 * n_relations, dim)
        relation_im (2 * n_relations, dim)
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph, Vocab

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"LQOTCX"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 64
    epochs: int = 200
    learning_rate: float = 10.0
    l2: float = 1e-4
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.batch_size < 1:
            raise ValueError("dim and batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate <= 0 or self.l2 < 0:
            raise ValueError("learning_rate must be positive and l2 non-negative")


@dataclass
class ComplExModel:
    entity_re: np.ndarray
    entity_im: np.ndarray
    relation_re: np.ndarray
    relation_im: np.ndarray
    seed: int = 0
    dim: int = field(init=False)

    def __post_init__(self):
        self.dim = self.entity_re.shape[1]
        if self.relation_re.shape[0] % 2:
            raise ValueError("relation block must hold forward and reciprocal rows")
        for arr in self.params():
            if arr.shape[1] != self.dim:
                raise ValueError("embedding widths disagree")

    @property
    def n_entities(self) -> int:
        return self.entity_re.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_re.shape[0] // 2

    def params(self) -> tuple[np.ndarray, ...]:
        return self.entity_re, self.entity_im, self.relation_re, self.relation_im

    def copy(self) -> "ComplExModel":
        return ComplExModel(*(p.copy() for p in self.params()), seed=self.seed)

    def entity(self, e: int) -> np.ndarray:
        return self.entity_re[e] + 1j * self.entity_im[e]

    def relation(self, r: int) -> np.ndarray:
        return self.relation_re[r] + 1j * self.relation_im[r]


def init_model(vocab: Vocab, config: TrainConfig) -> ComplExModel:
    d = config.dim
    bound = 2.0 / np.sqrt(d)
    rng = np.random.default_rng(config.seed)
    n, m = vocab.n_entities, 2 * vocab.n_relations
    return ComplExModel(
        rng.uniform(-bound, bound, (n, d)),
        rng.uniform(-bound, bound, (n, d)),
        rng.uniform(-bound, bound, (m, d)),
        rng.uniform(-bound, bound, (m, d)),
        seed=config.seed,
    )


def _query(model: ComplExModel, h, r) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of E[h] * W[r]."""
    ar, ai = model.entity_re[h], model.entity_im[h]
    wr, wi = model.relation_re[r], model.relation_im[r]
    return ar * wr - ai * wi, ar * wi + ai * wr


def score(model: ComplExModel, h: int, r: int, t: int) -> float:
    """Re(sum(E[h] * W[r] * conj(E[t])))."""
    qr, qi = _query(model, h, r)
    return float((qr * model.entity_re[t] + qi * model.entity_im[t]).sum())


def score_all_tails(model: ComplExModel, h: int, r: int) -> np.ndarray:
    qr, qi = _query(model, h, r)
    return (qr * model.entity_re + qi * model.entity_im).sum(axis=1)


def score_rows(model: ComplExModel, heads: np.ndarray, r: int) -> np.ndarray:
    """Scores for several heads at once; row k equals ``score_all_tails(heads[k], r)``."""
    qr, qi = _query(model, heads, r)
    return (qr[:, None, :] * model.entity_re[None] + qi[:, None, :] * model.entity_im[None]).sum(axis=-1)


def _training_examples(kg: KnowledgeGraph) -> np.ndarray:
    """(query entity, query relation, answer) rows for both prediction directions."""
    tr = np.asarray(kg.triples, dtype=np.int64).reshape(-1, 3)
    fwd = tr
    rev = np.stack([tr[:, 2], tr[:, 1] + kg.n_relations, tr[:, 0]], axis=1)
    return np.concatenate([fwd, rev])


def loss_and_grad(model: ComplExModel, examples: np.ndarray, l2: float
                  ) -> tuple[float, tuple[np.ndarray, ...]]:
    """Mean softmax cross-entropy over ``examples`` plus ``l2 * ||params||^2``."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _loss_and_grad(model, examples, l2)


def _loss_and_grad(model, examples, l2):
    er, ei, wr, wi = model.params()
    h, r, t = examples[:, 0], examples[:, 1], examples[:, 2]
    ar, ai, cr, ci = er[h], ei[h], wr[r], wi[r]
    qr = ar * cr - ai * ci
    qi = ar * ci + ai * cr
    logits = qr @ er.T + qi @ ei.T
    logits -= logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    z = expd.sum(axis=1)
    n = len(examples)
    rows = np.arange(n)
    ce = np.log(z) - logits[rows, t]
    reg = sum(float((p * p).sum()) for p in model.params())
    loss = float(ce.mean()) + l2 * reg

    g = expd / z[:, None]
    g[rows, t] -= 1.0
    g /= n
    dqr = g @ er
    dqi = g @ ei
    d_er = g.T @ qr + 2 * l2 * er
    d_ei = g.T @ qi + 2 * l2 * ei
    d_wr = 2 * l2 * wr
    d_wi = 2 * l2 * wi
    np.add.at(d_er, h, dqr * cr + dqi * ci)
    np.add.at(d_ei, h, -dqr * ci + dqi * cr)
    np.add.at(d_wr, r, dqr * ar + dqi * ai)
    np.add.at(d_wi, r, -dqr * ai + dqi * ar)
    return loss, (d_er, d_ei, d_wr, d_wi)


def train(model: ComplExModel, kg: KnowledgeGraph, config: TrainConfig
          ) -> tuple[ComplExModel, list[float]]:
    """Plain mini-batch gradient descent; returns a new model and per-epoch mean loss."""
    if len(kg) == 0:
        raise ValueError("cannot train on an empty graph")
    if model.n_entities != kg.n_entities or model.n_relations != kg.n_relations:
        raise ValueError("model and graph vocabularies differ in size")
    model = model.copy()
    examples = _training_examples(kg)
    rng = np.random.default_rng(config.seed)
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = examples[order[start:start + config.batch_size]]
            loss, grads = loss_and_grad(model, batch, config.l2)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}; "
                    f"try a smaller learning rate (now {config.learning_rate})")
            for p, gp in zip(model.params(), grads):
                p -= config.learning_rate * gp
            batch_losses.append(loss)
        history.append(float(np.mean(batch_losses)))
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            log.debug("epoch %d loss %.6f", epoch, history[-1])
    return model, history


def tail_probabilities(model: ComplExModel, h: int, r: int) -> np.ndarray:
    s = score_all_tails(model, h, r)
    s = np.exp(s - s.max())
    return s / s.sum()


def save_model(model: ComplExModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<4q", model.n_entities, model.n_relations, model.dim, model.seed))
        for p in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path: str | Path) -> ComplExModel:
    data = Path(path).read_bytes()
    if data[:6] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a ComplEx checkpoint")
    (version,) = struct.unpack_from("<B", data, 6)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    n, m, d, seed = struct.unpack_from("<4q", data, 7)
    offset = 7 + 32
    arrays = []
    for rows in (n, n, 2 * m, 2 * m):
        count = rows * d
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(rows, d)
        arrays.append(arr.astype(np.float64))
        offset += count * 8
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ComplExModel(*arrays, seed=seed)
