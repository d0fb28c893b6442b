"""Language-model providers: deterministic mocks, a disk cache and an HTTP client.

Every provider implements ``ask(prompt, sample=0) -> str``. ``sample`` selects
one of several independent answers to the same prompt; deterministic
providers must return the same text for the same ``(prompt, sample)``.

Fixture files (read by :class:`MockProvider`) hold one record per line::

    key <TAB> name,name,... [<TAB> name,name,... for sample 1 ...]

``key`` is either ``sha256:<hex digest of the full prompt>`` or the bare
question text placed in the prompt. Commas and backslashes inside names are
escaped with a backslash. When a record has fewer sample blocks than
requested, blocks are reused cyclically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from ..kg import KnowledgeGraph
from . import prompts

log = logging.getLogger(__name__)


class ProviderError(RuntimeError):
    pass


class AnswerProvider(Protocol):
    supports_samples: bool

    def ask(self, prompt: str, sample: int = 0) -> str: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# -- fixture files ---------------------------------------------------------------

def _escape(name: str) -> str:
    if "\t" in name or "\n" in name:
        raise ValueError(f"fixture names cannot contain tabs or newlines: {name!r}")
    return name.replace("\\", "\\\\").replace(",", "\\,")


def _split_names(block: str) -> list[str]:
    names, buf, i = [], [], 0
    while i < len(block):
        c = block[i]
        if c == "\\" and i + 1 < len(block):
            buf.append(block[i + 1])
            i += 2
            continue
        if c == ",":
            names.append("".join(buf))
            buf = []
        else:
            buf.append(c)
        i += 1
    names.append("".join(buf))
    return [n for n in names if n]


def read_fixtures(path: str | Path) -> dict[str, list[list[str]]]:
    fixtures: dict[str, list[list[str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            key, sep, rest = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key<TAB>answers")
            fixtures[key] = [_split_names(b) for b in rest.split("\t")]
    return fixtures


def write_fixtures(path: str | Path, fixtures: Mapping[str, Sequence[Sequence[str]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(fixtures):
            if "\t" in key or "\n" in key:
                raise ValueError(f"fixture key cannot contain tabs or newlines: {key!r}")
            blocks = [",".join(_escape(n) for n in sample) for sample in fixtures[key]]
            fh.write(key + "\t" + "\t".join(blocks) + "\n")


def _respond(kind: str | None, groups: tuple[str, ...], names: list[str]) -> str:
    if kind == prompts.ANSWER_EVALUATION:
        return json.dumps({"input": groups[0], "answer": names})
    if kind == prompts.ATOM_TO_QUESTION:
        return names[0] if names else ""
    return json.dumps({"answer entity": names})


class MockProvider:
    """Replays a fixture table; unknown prompts get a fixed refusal."""

    supports_samples = True
    UNKNOWN = "I cannot answer this question."

    def __init__(self, fixtures: Mapping[str, Sequence[Sequence[str]]]):
        self.fixtures = {k: [list(s) for s in v] for k, v in fixtures.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "MockProvider":
        return cls(read_fixtures(path))

    def lookup(self, prompt: str) -> tuple[str | None, tuple[str, ...], list[list[str]] | None]:
        kind, groups = prompts.classify(prompt)
        blocks = self.fixtures.get("sha256:" + prompt_hash(prompt))
        if blocks is None and groups:
            blocks = self.fixtures.get(groups[0] if kind != prompts.ATOM_TO_QUESTION else groups[1])
        return kind, groups, blocks

    def ask(self, prompt: str, sample: int = 0) -> str:
        kind, groups, blocks = self.lookup(prompt)
        if not blocks:
            return self.UNKNOWN
        return _respond(kind, groups, blocks[sample % len(blocks)])


class StaticProvider:
    """Returns the same text for every prompt (e.g. garbage for degradation tests)."""

    supports_samples = True

    def __init__(self, text: str = "~~ lorem ipsum {not json ~~"):
        self.text = text

    def ask(self, prompt: str, sample: int = 0) -> str:
        return self.text


class FailingProvider:
    supports_samples = True

    def ask(self, prompt: str, sample: int = 0) -> str:
        raise ProviderError("provider unavailable")


class KGOracleProvider:
    """Answers projection questions exactly from a (full) knowledge graph.

    ``templates`` maps relation ids to question templates containing
    ``entity1``; a question is answered when it matches one template with a
    list of ``" or "``-joined entity names. ``whole_queries`` maps complete
    question texts to answer names (used for one-shot querying).
    """

    supports_samples = True

    def __init__(self, kg: KnowledgeGraph, templates: Mapping[int, str],
                 whole_queries: Mapping[str, Sequence[str]] | None = None, cap: int = 10):
        self.kg = kg
        self.cap = cap
        self.whole_queries = dict(whole_queries or {})
        self._patterns = []
        for r in sorted(templates):
            pre, _, post = templates[r].partition("entity1")
            self._patterns.append((r, pre, post))
        self._templates = dict(templates)

    def answer_question(self, question: str) -> list[str] | None:
        if question in self.whole_queries:
            return list(self.whole_queries[question])
        vocab = self.kg.vocab
        for r, pre, post in self._patterns:
            if not (question.startswith(pre) and question.endswith(post)):
                continue
            middle = question[len(pre):len(question) - len(post)]
            names = middle.split(" or ")
            if not all(n in vocab.entity_ids for n in names):
                continue
            hits: dict[int, int] = {}
            for n in names:
                for t in self.kg.out_index.get((vocab.entity_ids[n], r), ()):
                    hits[t] = hits.get(t, 0) + 1
            ranked = sorted(hits, key=lambda t: (-hits[t], t))[:self.cap]
            return [vocab.entities[t] for t in ranked]
        return None

    def ask(self, prompt: str, sample: int = 0) -> str:
        kind, groups = prompts.classify(prompt)
        if kind == prompts.ATOM_TO_QUESTION:
            rel = groups[1]
            r = self.kg.vocab.relation_ids.get(rel)
            return self._templates.get(r, f"What is {rel} of entity1?")
        if kind == prompts.ANSWER_EVALUATION:
            choices = [c for c in groups[1].split(", ") if c]
            return json.dumps({"input": groups[0], "answer": choices[:10]})
        if kind == prompts.PROJECTION:
            names = self.answer_question(groups[0])
            if names is not None:
                return json.dumps({"answer entity": names})
        return MockProvider.UNKNOWN


class RecordingProvider:
    """Wraps a provider and records its answers as fixture records."""

    def __init__(self, inner: AnswerProvider):
        self.inner = inner
        self.supports_samples = getattr(inner, "supports_samples", False)
        self.records: dict[str, dict[int, list[str]]] = {}

    def ask(self, prompt: str, sample: int = 0) -> str:
        from .bridge import extract_answer_names

        raw = self.inner.ask(prompt, sample)
        kind, groups = prompts.classify(prompt)
        if kind == prompts.PROJECTION:
            key, names = groups[0], extract_answer_names(raw, "answer entity")
        elif kind == prompts.ANSWER_EVALUATION:
            key, names = "sha256:" + prompt_hash(prompt), extract_answer_names(raw, "answer")
        elif kind == prompts.ATOM_TO_QUESTION:
            key, names = groups[1], [raw.strip()] if raw.strip() else None
        else:
            key, names = "sha256:" + prompt_hash(prompt), None
        if names is not None and "\t" not in key and "\n" not in key:
            self.records.setdefault(key, {})[sample] = names
        return raw

    def fixtures(self) -> dict[str, list[list[str]]]:
        return {k: [v[s] for s in sorted(v)] for k, v in self.records.items()}

    def save(self, path: str | Path) -> None:
        write_fixtures(path, self.fixtures())


class CachedProvider:
    """Disk cache keyed by a hash of ``(sample, prompt)``.

    Each entry is its own JSON file written atomically, so concurrent
    writers of the same key only race to replace identical content.
    """

    def __init__(self, inner: AnswerProvider, directory: str | Path):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.supports_samples = getattr(inner, "supports_samples", False)

    def _path(self, prompt: str, sample: int) -> Path:
        return self.directory / (prompt_hash(f"{sample}\n{prompt}") + ".json")

    def ask(self, prompt: str, sample: int = 0) -> str:
        path = self._path(prompt, sample)
        try:
            return json.loads(path.read_text("utf-8"))["response"]
        except (FileNotFoundError, json.JSONDecodeError, KeyError):
            pass
        response = self.inner.ask(prompt, sample)
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"prompt": prompt, "sample": sample, "response": response}, fh)
        os.replace(tmp, path)
        return response


class HTTPChatProvider:
    """Chat-completion endpoint client configured from the environment.

    Reads ``LQOT_LLM_URL``, ``LQOT_LLM_TOKEN`` and ``LQOT_LLM_MODEL``. Requests
    are tried up to three times; bodies are logged when ``debug`` is set or
    ``LQOT_LLM_DEBUG`` is non-empty.
    """

    supports_samples = True
    ATTEMPTS = 3

    def __init__(self, url: str | None = None, token: str | None = None,
                 model: str | None = None, debug: bool | None = None,
                 timeout: float = 60.0, transport=None):
        import httpx

        self.url = url or os.environ.get("LQOT_LLM_URL")
        self.token = token or os.environ.get("LQOT_LLM_TOKEN", "")
        self.model = model or os.environ.get("LQOT_LLM_MODEL")
        if not self.url or not self.model:
            raise ProviderError("LQOT_LLM_URL and LQOT_LLM_MODEL must be set for the live provider")
        self.debug = bool(os.environ.get("LQOT_LLM_DEBUG")) if debug is None else debug
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        self.client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def ask(self, prompt: str, sample: int = 0) -> str:
        import httpx

        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0 if sample == 0 else 1.0,
            "seed": sample,
        }
        if self.debug:
            log.info("request %s", json.dumps(body))
        last: Exception | None = None
        for attempt in range(self.ATTEMPTS):
            try:
                resp = self.client.post(self.url, json=body)
                resp.raise_for_status()
                payload = resp.json()
                if self.debug:
                    log.info("response %s", json.dumps(payload))
                return payload["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = exc
                log.warning("LLM request attempt %d failed: %s", attempt + 1, exc)
        raise ProviderError(f"LLM request failed after {self.ATTEMPTS} attempts: {last}")


def make_provider(spec: str, kg: KnowledgeGraph | None = None,
                  templates: Mapping[int, str] | None = None,
                  cache_dir: str | Path | None = None) -> AnswerProvider:
    """Build a provider from a short spec string.

    ``mock:<fixture file>``, ``oracle`` (needs ``kg`` and ``templates``),
    ``garbage``, ``fail``, ``live``.
    """
    name, _, arg = spec.partition(":")
    if name == "mock":
        provider: AnswerProvider = MockProvider.from_file(arg)
    elif name == "oracle":
        if kg is None or templates is None:
            raise ValueError("oracle provider needs a graph and question templates")
        provider = KGOracleProvider(kg, templates)
    elif name == "garbage":
        provider = StaticProvider()
    elif name == "fail":
        provider = FailingProvider()
    elif name == "live":
        provider = HTTPChatProvider()
    else:
        raise ValueError(f"unknown provider spec {spec!r}")
    if cache_dir is not None:
        provider = CachedProvider(provider, cache_dir)
    return provider
