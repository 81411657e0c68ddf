"""Tokenization and normalization helpers shared across modules."""

from __future__ import annotations

import re

_WORD_RE = re.compile(r"\w+(?:-\w+)*", re.UNICODE)
_SPACE_RE = re.compile(r"\s+", re.UNICODE)

SENTENCE_TERMINATORS = ".!?。！？"
_TERMINAL_PUNCT = SENTENCE_TERMINATORS + ",;:"


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; hyphenated compounds stay whole (``fact-q3-1``)."""
    return [m.group(0).lower() for m in _WORD_RE.finditer(text)]


def normalize(text: str) -> str:
    """Lowercase, collapse whitespace and strip terminal punctuation."""
    out = _SPACE_RE.sub(" ", text.lower()).strip()
    return out.rstrip(_TERMINAL_PUNCT + " ")


def normalize_with_map(text: str) -> tuple[str, list[int]]:
    """Whitespace-collapse + lowercase ``text``, keeping an index back-map.

    Returns ``(norm, index)`` where ``norm[i]`` came from ``text[index[i]]``.
    Terminal punctuation is kept so that substring spans stay addressable.
    """
    chars: list[str] = []
    index: list[int] = []
    pending_space = False
    for i, ch in enumerate(text):
        if ch.isspace():
            pending_space = bool(chars)
            continue
        if pending_space:
            chars.append(" ")
            index.append(i - 1)
            pending_space = False
        for low in ch.lower():
            chars.append(low)
            index.append(i)
    return "".join(chars), index
