from .bridge import (AnswerSet, FusionConfig, LLMHook, QuestionTemplate, atom_to_question,
                     describe_query, estimate_confidence, evaluate_answers, extract_answer_names,
                     fallback_template, fuse_into_fuzzy, likelihood_filter, make_projection_prompt,
                     parse_answer_payload, relation_templates, select_frontier)
from .providers import (AnswerProvider, CachedProvider, FailingProvider, HTTPChatProvider,
                        KGOracleProvider, MockProvider, ProviderError, RecordingProvider,
                        StaticProvider, make_provider, read_fixtures, write_fixtures)

__all__ = [
    "AnswerProvider", "AnswerSet", "CachedProvider", "FailingProvider", "FusionConfig",
    "HTTPChatProvider", "KGOracleProvider", "LLMHook", "MockProvider", "ProviderError",
    "QuestionTemplate", "RecordingProvider", "StaticProvider", "atom_to_question",
    "describe_query", "estimate_confidence", "evaluate_answers", "extract_answer_names",
    "fallback_template", "fuse_into_fuzzy", "likelihood_filter", "make_projection_prompt",
    "make_provider", "parse_answer_payload", "read_fixtures", "relation_templates",
    "select_frontier", "write_fixtures",
]
