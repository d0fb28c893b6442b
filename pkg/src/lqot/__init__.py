"""Complex logical query answering over incomplete knowledge graphs.

Queries are computation trees evaluated with product fuzzy logic over
per-relation adjacency matrices derived from a ComplEx embedding; an
optional LLM provider contributes answers at each projection.
"""

__version__ = "0.1.0"
