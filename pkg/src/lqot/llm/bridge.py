"""Turning query atoms into LLM questions and fusing the answers into fuzzy vectors."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..adjacency import SparseRelationMatrix
from ..fuzzy import project, ranking
from ..kg import KnowledgeGraph, Vocab, normalize_name
from ..query import (Anchor, Complement, Intersect, NegProject, Project, QueryTree, Union)
from . import prompts
from .providers import AnswerProvider

log = logging.getLogger(__name__)

PLACEHOLDER = "entity1"
EVALUATE_AT = ("off", "final", "all")

# relation -> question template examples, used when the provider gives no usable template
STATIC_TEMPLATES = {
    "location.location.containedby": "What is the location that contains entity1?",
    "location.location.timeZones": "What is the time zone of entity1?",
    "location.countyPlace.county": "What is the county of entity1?",
    "people.person.nationality": "What is the nationality of entity1?",
    "people.person.placeOfBirth": "Where was entity1 born?",
    "people.Relationship.sibling": "Who is the sibling of entity1?",
}


@dataclass(frozen=True)
class QuestionTemplate:
    relation: int
    text: str

    def __post_init__(self):
        if self.text.count(PLACEHOLDER) != 1:
            raise ValueError(f"template must contain {PLACEHOLDER!r} exactly once: {self.text!r}")

    def fill(self, entities: Sequence[str]) -> str:
        if not entities:
            raise ValueError("need at least one entity")
        return self.text.replace(PLACEHOLDER, " or ".join(entities))


@dataclass(frozen=True)
class AnswerSet:
    """Ranked ``(entity id, confidence)`` pairs with their provenance."""

    items: tuple[tuple[int, float], ...] = ()
    provenance: str = "llm"

    def __post_init__(self):
        ids = [e for e, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate entities in answer set")
        if any(not 0.0 <= p <= 1.0 for _, p in self.items):
            raise ValueError("confidences must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def ids(self) -> list[int]:
        return [e for e, _ in self.items]

    def confidence(self, e: int) -> float:
        return dict(self.items).get(e, 0.0)

    def names(self, vocab: Vocab) -> list[tuple[str, float]]:
        return [(vocab.entities[e], p) for e, p in self.items]


@dataclass(frozen=True)
class FusionConfig:
    theta: float = 0.5
    alpha: float = 0.9
    frontier_cap: int = 10
    frontier_tau: float = 0.5
    samples: int = 3
    evaluate_at: str = "off"

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must be in (0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.frontier_tau <= 1.0:
            raise ValueError("frontier_tau must be in [0, 1]")
        if self.frontier_cap < 1 or self.samples < 1:
            raise ValueError("frontier_cap and samples must be positive")
        if self.evaluate_at not in EVALUATE_AT:
            raise ValueError(f"evaluate_at must be one of {EVALUATE_AT}")


# -- questions -------------------------------------------------------------------

def fallback_template(relation_id: int, relation: str) -> QuestionTemplate:
    return QuestionTemplate(relation_id, STATIC_TEMPLATES.get(relation, f"What is {relation} of {PLACEHOLDER}?"))


def _extract_question(raw: str) -> str | None:
    for line in raw.splitlines():
        line = line.strip().strip("`*-").strip()
        if line.lower().startswith(("question:", "q:")):
            line = line.split(":", 1)[1].strip()
        line = line.strip('"\'')
        if line.count(PLACEHOLDER) == 1:
            return line
    return None


def atom_to_question(relation_id: int, relation: str, sample_pairs: Sequence[tuple[str, str]],
                     provider: AnswerProvider | None) -> QuestionTemplate:
    """Ask the provider to phrase ``relation`` as a question about ``entity1``."""
    if not sample_pairs:
        raise ValueError("need at least one example pair")
    if provider is None:
        return fallback_template(relation_id, relation)
    try:
        raw = provider.ask(prompts.atom_prompt(list(sample_pairs), relation))
    except Exception as exc:
        log.warning("question generation for %s failed (%s); using fallback template", relation, exc)
        return fallback_template(relation_id, relation)
    question = _extract_question(raw)
    if question is None:
        return fallback_template(relation_id, relation)
    return QuestionTemplate(relation_id, question)


def relation_templates(kg: KnowledgeGraph, provider: AnswerProvider | None,
                       pairs_per_relation: int = 3) -> dict[int, QuestionTemplate]:
    """One template per relation, using the first few edges of each as examples."""
    vocab = kg.vocab
    out = {}
    for r, name in enumerate(vocab.relations):
        pairs = [(vocab.entities[h], vocab.entities[t])
                 for h, rel, t in kg.triples if rel == r][:pairs_per_relation]
        if not pairs:
            out[r] = fallback_template(r, name)
        else:
            out[r] = atom_to_question(r, name, pairs, provider)
    return out


def make_projection_prompt(template: QuestionTemplate, entities: Sequence[str]) -> str:
    return prompts.projection_prompt(template.fill(entities))


def describe_query(tree: QueryTree, templates: Mapping[int, QuestionTemplate], vocab: Vocab) -> str:
    """A single natural-language question for a whole query tree."""
    def phrase(node: QueryTree) -> str:
        if isinstance(node, Anchor):
            return vocab.entities[node.entity]
        if isinstance(node, Project):
            return f"({templates[node.relation].fill([phrase(node.child)]).rstrip('?')})"
        if isinstance(node, NegProject):
            inner = templates[node.relation].fill([phrase(node.child)]).rstrip("?")
            return f"(not {inner})"
        if isinstance(node, Complement):
            return f"(anything except {phrase(node.child)})"
        joiner = " and " if isinstance(node, Intersect) else " or "
        return "(" + joiner.join(phrase(c) for c in node.children) + ")"

    text = phrase(tree)
    if text.startswith("(") and text.endswith(")"):
        text = text[1:-1]
    return text + "?"


# -- answers -------------------------------------------------------------------------

def extract_answer_names(raw: str, key: str = "answer entity") -> list[str] | None:
    """Names under ``key`` in the first JSON object of ``raw`` that has it.

    Surrounding prose and code fences are skipped. Returns None when no such
    object exists.
    """
    decoder = json.JSONDecoder()
    start = raw.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict) and key in obj:
            value = obj[key]
            if isinstance(value, str):
                value = [value]
            if isinstance(value, list):
                return [str(v) for v in value if isinstance(v, (str, int, float))]
        start = raw.find("{", start + 1)
    return None


def parse_answer_payload(raw: str, vocab: Vocab, key: str = "answer entity") -> list[int]:
    names = extract_answer_names(raw, key)
    if names is None:
        log.debug("no %r payload in response: %.80r", key, raw)
        return []
    ids, unknown = [], 0
    loose = vocab.loose_entity_ids
    for name in names:
        e = loose.get(normalize_name(name))
        if e is None:
            unknown += 1
        elif e not in ids:
            ids.append(e)
    if unknown:
        log.debug("dropped %d answer name(s) not in the vocabulary", unknown)
    return ids


def estimate_confidence(samples: Sequence[Sequence[int]]) -> AnswerSet:
    """Frequency of each entity across independent samples."""
    if not samples:
        raise ValueError("need at least one sample")
    counts: dict[int, int] = {}
    for sample in samples:
        for e in set(sample):
            counts[e] = counts.get(e, 0) + 1
    n = len(samples)
    items = sorted(((e, c / n) for e, c in counts.items()), key=lambda x: (-x[1], x[0]))
    return AnswerSet(tuple(items), "llm")


def likelihood_filter(answers: AnswerSet, theta: float) -> AnswerSet:
    """Keep answers whose ratio to the most confident one is at least ``theta``."""
    if not answers.items:
        return answers
    p_max = max(p for _, p in answers.items)
    if p_max <= 0:
        return AnswerSet((), answers.provenance)
    kept = tuple((e, p) for e, p in answers.items if p / p_max >= theta)
    return AnswerSet(kept, answers.provenance)


def fuse_into_fuzzy(t: np.ndarray, retained: AnswerSet, alpha: float) -> np.ndarray:
    if not retained.items:
        return t
    out = t.copy()
    for e, p in retained.items:
        out[e] = max(out[e], alpha * p)
    return out


def select_frontier(t: np.ndarray, config: FusionConfig, vocab: Vocab) -> list[str]:
    k = int(np.count_nonzero(t >= config.frontier_tau))
    take = min(k, config.frontier_cap) if k else 1
    return [vocab.entities[i] for i in ranking(t, take)]


def evaluate_answers(question: str, candidates: Sequence[str], provider: AnswerProvider,
                     vocab: Vocab) -> AnswerSet:
    """Let the provider re-rank (or replace) candidates; rank r gets confidence (11 - r) / 10."""
    if not candidates:
        raise ValueError("need at least one candidate")
    loose = vocab.loose_entity_ids
    fallback_ids = []
    for c in candidates:
        e = loose.get(normalize_name(c))
        if e is not None and e not in fallback_ids:
            fallback_ids.append(e)
    passthrough = AnswerSet(tuple((e, 1.0) for e in fallback_ids), "llm")
    try:
        raw = provider.ask(prompts.evaluation_prompt(question, list(candidates)))
    except Exception as exc:
        log.warning("answer evaluation failed (%s); keeping candidates", exc)
        return passthrough
    if extract_answer_names(raw, "answer") is None:
        return passthrough
    ids = parse_answer_payload(raw, vocab, key="answer")[:10]
    return AnswerSet(tuple((e, (10 - rank) / 10) for rank, e in enumerate(ids)), "llm")


# -- the per-node hook -----------------------------------------------------------------

@dataclass
class HookStats:
    calls: int = 0
    failures: int = 0
    fused_entities: int = 0


@dataclass
class LLMHook:
    """Per-node callback for :func:`lqot.fuzzy.execute` that fuses LLM answers.

    Only projection and negated projection nodes are touched. For a negated
    projection the provider is asked the positive question; its answers are
    fused into the positive projection and the negation then lowers those
    entities to ``1 - fused``.
    """

    provider: AnswerProvider
    templates: Mapping[int, QuestionTemplate]
    matrices: Mapping[int, SparseRelationMatrix]
    vocab: Vocab
    config: FusionConfig = field(default_factory=FusionConfig)
    root: QueryTree | None = None
    stats: HookStats = field(default_factory=HookStats)

    def for_query(self, tree: QueryTree) -> "LLMHook":
        self.root = tree
        return self

    def ask_llm(self, question: str) -> AnswerSet:
        prompt = prompts.projection_prompt(question)
        n = self.config.samples if getattr(self.provider, "supports_samples", False) else 1
        samples = [parse_answer_payload(self.provider.ask(prompt, s), self.vocab) for s in range(n)]
        return estimate_confidence(samples)

    def __call__(self, node: QueryTree, vec: np.ndarray, kids: Sequence[np.ndarray]):
        if not isinstance(node, (Project, NegProject)):
            return None
        self.stats.calls += 1
        try:
            frontier = select_frontier(kids[0], self.config, self.vocab)
            question = self.templates[node.relation].fill(frontier)
            retained = likelihood_filter(self.ask_llm(question), self.config.theta)
            at = self.config.evaluate_at
            if retained.items and (at == "all" or (at == "final" and node is self.root)):
                names = [self.vocab.entities[e] for e in retained.ids]
                retained = evaluate_answers(question, names, self.provider, self.vocab)
        except Exception as exc:
            self.stats.failures += 1
            log.warning("LLM step failed at %s: %s; keeping KG-only vector", type(node).__name__, exc)
            return vec
        if not retained.items:
            return vec
        self.stats.fused_entities += len(retained)
        if isinstance(node, Project):
            return fuse_into_fuzzy(vec, retained, self.config.alpha)
        positive = project(kids[0], self.matrices[node.relation])
        fused = fuse_into_fuzzy(positive, retained, self.config.alpha)
        out = vec.copy()
        ids = np.array(retained.ids)
        out[ids] = np.minimum(vec[ids], 1.0 - fused[ids])
        return out
