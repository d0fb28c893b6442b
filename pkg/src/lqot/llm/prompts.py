"""Versioned prompt templates and helpers to fill or match them.

Templates live in ``prompts/<version>/*.txt`` and use ``{text_A}`` /
``{text_B}`` placeholders. Filling uses plain string replacement because the
projection prompt contains literal JSON braces.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

PROMPT_VERSION = "v1"
ATOM_TO_QUESTION = "atom_to_question"
PROJECTION = "projection"
ANSWER_EVALUATION = "answer_evaluation"
PLACEHOLDERS = ("{text_A}", "{text_B}")


@lru_cache(maxsize=None)
def load_template(name: str, version: str = PROMPT_VERSION) -> str:
    text = (resources.files("lqot.llm") / "prompts" / version / f"{name}.txt").read_text("utf-8")
    return text[:-1] if text.endswith("\n") else text


def fill(template: str, text_a: str, text_b: str | None = None) -> str:
    out = template.replace("{text_A}", text_a)
    if text_b is not None:
        out = out.replace("{text_B}", text_b)
    return out


@lru_cache(maxsize=None)
def _template_regex(name: str, version: str) -> re.Pattern:
    template = load_template(name, version)
    parts = re.split(r"(\{text_[AB]\})", template)
    pattern = "".join("(.*)" if p in PLACEHOLDERS else re.escape(p) for p in parts)
    return re.compile(pattern, re.DOTALL)


def match(name: str, prompt: str, version: str = PROMPT_VERSION) -> tuple[str, ...] | None:
    """Placeholder values if ``prompt`` was produced from template ``name``."""
    m = _template_regex(name, version).fullmatch(prompt)
    return m.groups() if m else None


def classify(prompt: str) -> tuple[str, tuple[str, ...]] | tuple[None, tuple]:
    for name in (PROJECTION, ANSWER_EVALUATION, ATOM_TO_QUESTION):
        groups = match(name, prompt)
        if groups is not None:
            return name, groups
    return None, ()


def atom_prompt(pairs: list[tuple[str, str]], relation: str) -> str:
    text_a = ", ".join(f"({h}, {t})" for h, t in pairs)
    return fill(load_template(ATOM_TO_QUESTION), text_a, relation)


def projection_prompt(question: str) -> str:
    return fill(load_template(PROJECTION), question)


def evaluation_prompt(question: str, candidates: list[str]) -> str:
    return fill(load_template(ANSWER_EVALUATION), question, ", ".join(candidates))
