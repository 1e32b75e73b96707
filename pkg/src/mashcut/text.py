"""Tokenization and token-overlap relevance used by scoring and retrieval."""

from __future__ import annotations

import math
import re

_WORD = re.compile(r"[a-z0-9']+")

# Tiny closed stopword list; keyword extraction only, not linguistics.
STOPWORDS = frozenset(
    "a an and are as at be by for from in is it of on or that the this to with".split()
)

# Literal field names of the scripted instruction template; never keywords.
_TEMPLATE_WORDS = frozenset({"segment", "theme", "emotion", "pace", "beats", "after"})


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens, in order of appearance."""
    return _WORD.findall(text.lower())


def keywords(text: str) -> list[str]:
    """Content tokens: stopwords, template literals, and bare numbers dropped."""
    out = []
    for tok in tokenize(text):
        if tok in STOPWORDS or tok in _TEMPLATE_WORDS or tok.isdigit():
            continue
        out.append(tok)
    return out


def top_keywords(text: str, limit: int = 3) -> list[str]:
    """Most frequent content tokens, first occurrence breaking ties."""
    order: dict[str, int] = {}
    counts: dict[str, int] = {}
    for pos, tok in enumerate(keywords(text)):
        counts[tok] = counts.get(tok, 0) + 1
        order.setdefault(tok, pos)
    ranked = sorted(counts, key=lambda t: (-counts[t], order[t]))
    return ranked[:limit]


def overlap(query_tokens: set[str], doc_tokens: set[str]) -> float:
    """Cosine-style set overlap |Q∩D| / sqrt(|Q|·|D|), in [0, 1]."""
    if not query_tokens or not doc_tokens:
        return 0.0
    shared = len(query_tokens & doc_tokens)
    return shared / math.sqrt(len(query_tokens) * len(doc_tokens))
