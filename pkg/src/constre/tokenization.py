"""Desk-scale WordPiece vocabulary and greedy longest-match tokenizer."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

from .text import MARKERS, pre_split

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP) + MARKERS
CONTINUATION = "##"


@dataclass
class SubwordVocab:
    pieces: List[str]
    specials: Tuple[str, ...] = SPECIALS
    index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {p: i for i, p in enumerate(self.pieces)}
        if len(self.index) != len(self.pieces):
            raise ValueError("duplicate pieces in vocabulary")
        missing = [s for s in self.specials if s not in self.index]
        if missing:
            raise ValueError(f"vocabulary lacks special pieces {missing}")
        self._max_piece = max(len(p) for p in self.pieces)

    def __len__(self) -> int:
        return len(self.pieces)

    def __contains__(self, piece: str) -> bool:
        return piece in self.index

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    def id_of(self, piece: str) -> int:
        return self.index.get(piece, self.index[UNK])

    def is_special(self, piece: str) -> bool:
        return piece in self.specials

    @classmethod
    def from_pieces(cls, pieces: Iterable[str]) -> "SubwordVocab":
        """Vocabulary from explicit pieces; missing specials are prepended."""
        pieces = list(pieces)
        head = [s for s in SPECIALS if s not in pieces]
        return cls(head + pieces)


def build_vocab(texts: Iterable[str], min_freq: int = 2) -> SubwordVocab:
    """Whole words seen at least ``min_freq`` times, plus every character
    in both word-initial and ``##`` continuation form."""
    words: Counter = Counter()
    chars = set()
    n = 0
    for text in texts:
        n += 1
        for surface, _, _ in pre_split(text):
            if surface in MARKERS:
                continue
            words[surface] += 1
            chars.update(surface)
    if n == 0:
        raise ValueError("build_vocab needs at least one text")
    pieces = set(chars)
    pieces.update(CONTINUATION + c for c in chars)
    pieces.update(w for w, c in words.items() if c >= min_freq)
    pieces.difference_update(SPECIALS)
    return SubwordVocab(list(SPECIALS) + sorted(pieces))


def wordpiece(word: str, vocab: SubwordVocab) -> List[str]:
    """Greedy longest-match segmentation of a single token.

    A character with no piece becomes ``[UNK]`` on its own and matching
    resumes after it.
    """
    if word in vocab.specials:
        return [word]
    out = []
    start = 0
    limit = vocab._max_piece
    while start < len(word):
        end = min(len(word), start + limit)
        piece = None
        while end > start:
            cand = word[start:end] if start == 0 else CONTINUATION + word[start:end]
            if cand in vocab.index:
                piece = cand
                break
            end -= 1
        if piece is None:
            out.append(UNK)
            start += 1
        else:
            out.append(piece)
            start = end
    return out


@dataclass
class Tokenized:
    ids: List[int]
    pieces: List[str]
    tokens: List[Tuple[str, int, int]]
    # per token: [start, end) into ``ids``; CLS sits at 0 and is not mapped
    token_to_subword: List[Tuple[int, int]]


def tokenize(text: str, vocab: SubwordVocab) -> Tokenized:
    tokens = pre_split(text)
    pieces = [CLS]
    spans = []
    for surface, _, _ in tokens:
        wp = wordpiece(surface, vocab)
        spans.append((len(pieces), len(pieces) + len(wp)))
        pieces.extend(wp)
    pieces.append(SEP)
    return Tokenized([vocab.id_of(p) for p in pieces], pieces, tokens, spans)


def detokenize(tok: Tokenized) -> List[str]:
    """Rebuild token surfaces from the pieces (UNK stays as ``[UNK]``)."""
    out = []
    for s, e in tok.token_to_subword:
        parts = [p[len(CONTINUATION):] if p.startswith(CONTINUATION) else p for p in tok.pieces[s:e]]
        out.append("".join(parts))
    return out
