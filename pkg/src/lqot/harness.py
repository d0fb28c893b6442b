"""Metrics, the brute-force fuzzy oracle, and end-to-end experiments.

Experiment config files are flat ``key = value`` text; ``#`` starts a
comment. Keys and defaults are the fields of :class:`ExperimentConfig`;
list values (``shapes``) are comma-separated. ``triples_path`` may also be
``synthetic:<entities>:<relations>:<edges>:<seed>`` for a generated graph.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import adjacency, kge
from .adjacency import AdjacencyConfig, SparseRelationMatrix
from .fuzzy import execute, ranking, t_conorm
from .kg import KnowledgeGraph, load_triples, split_edges, synthetic_kg
from .llm import (FusionConfig, KGOracleProvider, LLMHook, RecordingProvider, describe_query,
                  estimate_confidence, make_provider, parse_answer_payload, relation_templates)
from .llm import prompts
from .query import (SHAPES, Anchor, Complement, Intersect, NegProject, Project, QueryTree,
                    WorkloadItem, children, count_variables, read_workload, render, sample_query)

log = logging.getLogger(__name__)

HIT_KS = (1, 3, 10)
MODES = ("kg_only", "llm_only", "combined")


def hit_at_k(ranked: Sequence[int], gold, k: int) -> int:
    if not gold:
        log.warning("hit_at_k called with empty gold set")
        return 0
    return int(any(e in gold for e in list(ranked)[:k]))


# -- brute-force oracle ------------------------------------------------------------

class OracleGuardError(ValueError):
    pass


def _scope_variables(node: QueryTree) -> list[QueryTree]:
    """Nodes whose output is an existential variable bound in this scope.

    Complement opens a new scope, so its subtree is not entered.
    """
    out = []
    for c in children(node):
        if isinstance(c, Complement):
            continue
        out.extend(_scope_variables(c))
    if isinstance(node, (Project, NegProject)) and not isinstance(node.child, Anchor):
        out.append(node.child)
    return out


def brute_force_fuzzy(tree: QueryTree, matrices: Mapping[int, SparseRelationMatrix],
                      target: int, n: int | None = None, max_variables: int = 3,
                      max_entities: int = 12) -> float:
    """Fuzzy truth of ``tree`` at ``target`` by enumerating variable assignments.

    Atoms ``r(u, v)`` are valued by ``M_r[u, v]`` and negated atoms by
    ``1 - M_r[u, v]``; conjunction is the product, disjunction the product
    t-conorm, and each existential variable is maximised over all entities.
    """
    if n is None:
        n = next(iter(matrices.values())).n
    if count_variables(tree) > max_variables:
        raise OracleGuardError(f"more than {max_variables} existential variables")
    if n > max_entities:
        raise OracleGuardError(f"{n} entities exceeds the oracle limit of {max_entities}")
    dense = {r: m.dense() for r, m in matrices.items()}

    def value(node: QueryTree, x: int, assign: dict[int, int]) -> float:
        if isinstance(node, Anchor):
            return 1.0 if node.entity == x else 0.0
        if isinstance(node, (Project, NegProject)):
            m = dense[node.relation]
            if isinstance(node.child, Anchor):
                u, head = node.child.entity, 1.0
            else:
                u = assign[id(node.child)]
                head = value(node.child, u, assign)
            atom = m[u, x] if isinstance(node, Project) else 1.0 - m[u, x]
            return head * atom
        if isinstance(node, Complement):
            return 1.0 - best(node.child, x, assign)
        vals = [value(c, x, assign) for c in node.children]
        acc = vals[0]
        for v in vals[1:]:
            acc = acc * v if isinstance(node, Intersect) else t_conorm(acc, v)
        return acc

    def best(node: QueryTree, x: int, outer: dict[int, int]) -> float:
        variables = _scope_variables(node)
        top = 0.0
        for combo in itertools.product(range(n), repeat=len(variables)):
            assign = dict(outer)
            assign.update((id(v), e) for v, e in zip(variables, combo))
            top = max(top, value(node, x, assign))
        return top

    return best(tree, target, {})


# -- experiment configuration ----------------------------------------------------------

@dataclass
class ExperimentConfig:
    triples_path: str = "synthetic:200:5:800:1"
    shapes: tuple[str, ...] = SHAPES
    per_shape_count: int = 50
    keep_fraction: float = 0.5
    mode: str = "kg_only"
    provider: str = "oracle"
    adjacency: str = "neural"
    workload: str = ""
    theta: float = 0.5
    alpha: float = 0.9
    samples: int = 3
    frontier_tau: float = 0.5
    frontier_cap: int = 10
    evaluate_at: str = "off"
    delta: float = 1e-4
    top_k: int = 50
    floor: float = 1e-4
    dim: int = 64
    epochs: int = 200
    learning_rate: float = 10.0
    l2: float = 1e-4
    batch_size: int = 512
    seed_split: int = 0
    seed_queries: int = 0
    seed_train: int = 0
    threads: int = 1
    fixtures_out: str = ""
    cache_dir: str = ""

    def __post_init__(self):
        if isinstance(self.shapes, str):
            self.shapes = tuple(s.strip() for s in self.shapes.split(",") if s.strip())
        self.shapes = tuple(self.shapes)
        bad = [s for s in self.shapes if s not in SHAPES]
        if bad:
            raise ValueError(f"unknown shapes {bad}; expected {SHAPES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.adjacency not in ("neural", "boolean"):
            raise ValueError("adjacency must be 'neural' or 'boolean'")

    def fusion(self) -> FusionConfig:
        return FusionConfig(self.theta, self.alpha, self.frontier_cap, self.frontier_tau,
                            self.samples, self.evaluate_at)

    def train_config(self) -> kge.TrainConfig:
        return kge.TrainConfig(self.dim, self.epochs, self.learning_rate, self.l2,
                               self.batch_size, self.seed_train)

    def adjacency_config(self) -> AdjacencyConfig:
        return AdjacencyConfig(self.delta, self.top_k, self.floor)

    def echo(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(v) if isinstance(v, tuple) else str(v)
        return out


def parse_config_text(text: str) -> ExperimentConfig:
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value")
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        if kind == "int":
            values[key] = int(value)
        elif kind == "float":
            values[key] = float(value)
        else:
            values[key] = value
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text("utf-8"))


# -- reports ------------------------------------------------------------------------------

@dataclass
class QueryResult:
    shape: str
    query: str
    ranked: tuple[str, ...]
    hits: tuple[int, ...]


@dataclass
class EvalReport:
    hits: dict[str, dict[int, int]]
    totals: dict[str, int]
    config: dict[str, str]
    queries: list[QueryResult] = field(default_factory=list)
    wall_clock: float = 0.0

    def rate(self, shape: str, k: int) -> float:
        if shape == "overall":
            total = sum(self.totals.values())
            return sum(h[k] for h in self.hits.values()) / total if total else 0.0
        return self.hits[shape][k] / self.totals[shape] if self.totals[shape] else 0.0

    def rows(self) -> list[tuple[str, int, int, int, float]]:
        out = []
        for shape in list(self.hits) + ["overall"]:
            for k in HIT_KS:
                if shape == "overall":
                    hits = sum(h[k] for h in self.hits.values())
                    total = sum(self.totals.values())
                else:
                    hits, total = self.hits[shape][k], self.totals[shape]
                out.append((shape, k, hits, total, round(hits / total, 3) if total else 0.0))
        return out

    def comparable(self) -> dict:
        """Everything except the wall-clock time."""
        return {"hits": self.hits, "totals": self.totals, "config": self.config,
                "queries": [dataclasses.astuple(q) for q in self.queries]}

    def table(self) -> str:
        lines = ["# " + " ".join(f"{k}={v}" for k, v in self.config.items())]
        lines.append(f"{'shape':<8}{'n':>6}" + "".join(f"{'Hit@' + str(k):>9}" for k in HIT_KS))
        for shape in list(self.hits) + ["overall"]:
            n = sum(self.totals.values()) if shape == "overall" else self.totals[shape]
            lines.append(f"{shape:<8}{n:>6}" + "".join(f"{self.rate(shape, k):>9.3f}" for k in HIT_KS))
        lines.append(f"# wall_clock={self.wall_clock:.2f}s")
        return "\n".join(lines)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["shape", "k", "hits", "total", "rate"])
        for shape, k, hits, total, rate in self.rows():
            w.writerow([shape, k, hits, total, f"{rate:.3f}"])
        return buf.getvalue()


# -- experiment -----------------------------------------------------------------------------

class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"experiment failed at stage '{stage}': {cause}")
        self.stage = stage


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, ExperimentError):
            raise ExperimentError(self.name, exc) from exc
        return False


def load_graph(spec: str) -> KnowledgeGraph:
    if spec.startswith("synthetic"):
        parts = [int(p) for p in spec.split(":")[1:]]
        names = ("n_entities", "n_relations", "n_edges", "seed")
        return synthetic_kg(**dict(zip(names, parts)))
    return load_triples(spec)


def sample_workload(kg: KnowledgeGraph, shapes: Sequence[str], per_shape: int,
                    seed: int) -> list[WorkloadItem]:
    items = []
    for shape in shapes:
        for i in range(per_shape):
            tree, gold = sample_query(kg, shape, np.random.SeedSequence([seed, SHAPES.index(shape), i]))
            items.append(WorkloadItem(tree, "", gold, shape))
    return items


def build_matrices(config: ExperimentConfig, train_kg: KnowledgeGraph
                   ) -> dict[int, SparseRelationMatrix]:
    if config.adjacency == "boolean":
        return adjacency.boolean_matrices(train_kg)
    tc = config.train_config()
    model, history = kge.train(kge.init_model(train_kg.vocab, tc), train_kg, tc)
    if history:
        log.info("KGE loss %.4f -> %.4f", history[0], history[-1])
    return adjacency.build_all(model, train_kg, config.adjacency_config())


def _llm_only_ranking(provider, question: str, config: ExperimentConfig, vocab) -> list[int]:
    prompt = prompts.projection_prompt(question)
    n = config.samples if getattr(provider, "supports_samples", False) else 1
    try:
        samples = [parse_answer_payload(provider.ask(prompt, s), vocab) for s in range(n)]
    except Exception as exc:
        log.warning("LLM-only query failed: %s", exc)
        return []
    first_seen = {}
    for sample in samples:
        for e in sample:
            first_seen.setdefault(e, len(first_seen))
    conf = dict(estimate_confidence(samples).items)
    return sorted(first_seen, key=lambda e: (-conf[e], first_seen[e]))


def run_experiment(config: ExperimentConfig, provider=None,
                   matrices: Mapping[int, SparseRelationMatrix] | None = None) -> EvalReport:
    """Load, split, train, build matrices, sample queries, answer them, score Hit@k.

    ``provider`` overrides ``config.provider``; ``matrices`` skips training
    and matrix construction.
    """
    started = time.perf_counter()
    with _Stage("load"):
        full = load_graph(config.triples_path)
    with _Stage("split"):
        train_kg, _removed = split_edges(full, config.keep_fraction, config.seed_split)
    if matrices is None:
        with _Stage("matrices"):
            matrices = build_matrices(config, train_kg) if config.mode != "llm_only" else {}
    with _Stage("queries"):
        if config.workload:
            items = read_workload(config.workload, full.vocab)
        else:
            items = sample_workload(full, config.shapes, config.per_shape_count, config.seed_queries)
    vocab = full.vocab

    recorder = None
    if config.mode != "kg_only":
        with _Stage("provider"):
            if provider is None and config.provider == "oracle":
                templates = relation_templates(train_kg, None)
                whole = {}
                if config.mode == "llm_only":
                    for item in items:
                        q = item.question or describe_query(item.tree, templates, vocab)
                        whole[q] = [vocab.entities[e] for e in sorted(item.gold)][:10]
                provider = KGOracleProvider(full, {r: t.text for r, t in templates.items()}, whole)
            elif provider is None:
                provider = make_provider(config.provider, cache_dir=config.cache_dir or None)
                templates = relation_templates(train_kg, provider)
            else:
                templates = relation_templates(train_kg, provider)
            if config.fixtures_out:
                provider = recorder = RecordingProvider(provider)

    fusion = config.fusion()

    def answer(item: WorkloadItem) -> QueryResult:
        if config.mode == "llm_only":
            question = item.question or describe_query(item.tree, templates, vocab)
            ranked = _llm_only_ranking(provider, question, config, vocab)[:max(HIT_KS)]
        else:
            hook = None
            if config.mode == "combined":
                hook = LLMHook(provider, templates, matrices, vocab, fusion).for_query(item.tree)
            vec = execute(item.tree, matrices, n=vocab.n_entities, hook=hook)
            ranked = ranking(vec, max(HIT_KS)).tolist()
        hits = tuple(hit_at_k(ranked, item.gold, k) for k in HIT_KS)
        return QueryResult(item.shape, render(item.tree, vocab),
                           tuple(vocab.entities[e] for e in ranked), hits)

    with _Stage("answer"):
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                results = list(pool.map(answer, items))
        else:
            results = [answer(item) for item in items]

    with _Stage("aggregate"):
        shapes = list(dict.fromkeys(r.shape for r in results))
        hits = {s: {k: 0 for k in HIT_KS} for s in shapes}
        totals = {s: 0 for s in shapes}
        for res in results:
            totals[res.shape] += 1
            for k, h in zip(HIT_KS, res.hits):
                hits[res.shape][k] += h
        if recorder is not None:
            recorder.save(config.fixtures_out)
    return EvalReport(hits, totals, config.echo(), results, time.perf_counter() - started)


def default_threads() -> int:
    return os.cpu_count() or 1
