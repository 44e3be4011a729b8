"""Label normalization shared by classification, the synthetic oracle, and metrics."""
from __future__ import annotations

import re

_ARTICLES = ("a ", "an ", "the ")
_TRAILING_PUNCT = ".,;:!?\"'`"


def normalize_label(text: str) -> str:
    """Lowercase, collapse whitespace, strip leading articles and trailing punctuation."""
    s = re.sub(r"\s+", " ", text.strip().lower())
    changed = True
    while changed:
        changed = False
        for art in _ARTICLES:
            if s.startswith(art):
                s = s[len(art):].lstrip()
                changed = True
        stripped = s.rstrip(_TRAILING_PUNCT).rstrip()
        if stripped != s:
            s = stripped
            changed = True
    return s


def has_alphabetic(text: str) -> bool:
    return any(c.isalpha() for c in text)
