"""Marker constants and the whitespace/punctuation pre-splitter shared by all stages."""

from __future__ import annotations

import re
import unicodedata
from typing import List, Tuple

SUBJECT_MARKER = "@@"
OBJECT_MARKER = "$$"
OVERLAP_MARKER = "\u00a2\u00a2"
MARKERS = (SUBJECT_MARKER, OBJECT_MARKER, OVERLAP_MARKER)

_MARKER_RE = re.compile("|".join(re.escape(m) for m in MARKERS))

Token = Tuple[str, int, int]


def _is_punct(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return cat.startswith("P") or cat.startswith("S")


def pre_split(text: str, offset: int = 0) -> List[Token]:
    """Split ``text`` into ``(surface, start, end)`` tokens.

    Whitespace separates tokens, every punctuation or symbol character is
    its own token, and marker strings are kept whole. Offsets are shifted
    by ``offset``.
    """
    tokens: List[Token] = []
    i, n = 0, len(text)
    word_start = -1

    def flush(end):
        nonlocal word_start
        if word_start >= 0:
            tokens.append((text[word_start:end], word_start + offset, end + offset))
            word_start = -1

    while i < n:
        if text.startswith(MARKERS, i):
            flush(i)
            tokens.append((text[i:i + 2], i + offset, i + 2 + offset))
            i += 2
            continue
        ch = text[i]
        if ch.isspace():
            flush(i)
        elif _is_punct(ch):
            flush(i)
            tokens.append((ch, i + offset, i + 1 + offset))
        elif word_start < 0:
            word_start = i
        i += 1
    flush(n)
    return tokens


def strip_markers(text: str) -> str:
    return _MARKER_RE.sub("", text)


def unmarked_offsets(marked: str) -> List[int]:
    """For each character of ``marked``, its offset in the marker-free text.

    Marker characters map to the offset of the next non-marker character.
    """
    out = []
    pos = 0
    i = 0
    while i < len(marked):
        if marked.startswith(MARKERS, i):
            out.extend((pos, pos))
            i += 2
            continue
        out.append(pos)
        pos += 1
        i += 1
    return out
