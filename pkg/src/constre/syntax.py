"""Bracketed constituency trees and minimal NP/VP chunking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

NP, VP, SINGLETON = "NP", "VP", "SINGLETON"
CHUNK_LABELS = (NP, VP)

_ESCAPES = {"(": "-LRB-", ")": "-RRB-"}
_UNESCAPES = {"-LRB-": "(", "-RRB-": ")", "-LSB-": "[", "-RSB-": "]", "-LCB-": "{", "-RCB-": "}"}


class TreeParseError(ValueError):
    pass


@dataclass
class ConstTree:
    label: str
    children: List["ConstTree"] = field(default_factory=list)
    token: Optional[str] = None
    index: Optional[int] = None

    @property
    def is_leaf(self) -> bool:
        return self.token is not None

    @property
    def base_label(self) -> str:
        # "NP-SBJ" -> "NP", "-NONE-" stays whole
        if self.label.startswith("-"):
            return self.label
        return self.label.split("-", 1)[0].split("=", 1)[0]

    def leaves(self) -> List["ConstTree"]:
        if self.is_leaf:
            return [self]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def tokens(self) -> List[str]:
        return [leaf.token for leaf in self.leaves()]

    def span(self) -> Tuple[int, int]:
        leaves = self.leaves()
        return leaves[0].index, leaves[-1].index + 1

    def subtrees(self) -> Iterator["ConstTree"]:
        """Pre-order, left-to-right."""
        yield self
        for c in self.children:
            yield from c.subtrees()

    def __str__(self) -> str:
        return to_bracketed(self)


@dataclass(frozen=True)
class ChunkSpan:
    kind: str
    token_start: int
    token_end: int

    def __len__(self) -> int:
        return self.token_end - self.token_start


def _tokenize_brackets(s: str) -> List[str]:
    out, buf = [], []
    for ch in s:
        if ch in "()":
            if buf:
                out.append("".join(buf))
                buf = []
            out.append(ch)
        elif ch.isspace():
            if buf:
                out.append("".join(buf))
                buf = []
        else:
            buf.append(ch)
    if buf:
        out.append("".join(buf))
    return out


def parse_bracketed(s: str) -> ConstTree:
    """Parse a Penn-style ``(LABEL child ...)`` string.

    Leaves are ``(POS token)``; tokens are numbered left to right. An
    unlabeled outer wrapper ``( (S ...) )`` as written by treebank tools is
    dropped.
    """
    toks = _tokenize_brackets(s)
    if not toks:
        raise TreeParseError("empty tree string")
    pos = 0
    counter = [0]

    def parse_node() -> ConstTree:
        nonlocal pos
        if toks[pos] != "(":
            raise TreeParseError(f"bare token {toks[pos]!r} outside a POS pair")
        pos += 1
        if pos >= len(toks):
            raise TreeParseError("unbalanced parentheses: input ends inside a node")
        if toks[pos] == ")":
            raise TreeParseError("empty node '()'")
        if toks[pos] == "(":
            label = ""
        else:
            label = toks[pos]
            pos += 1
        if pos >= len(toks):
            raise TreeParseError("unbalanced parentheses: input ends inside a node")
        # leaf: (POS token)
        if toks[pos] not in "()":
            if not label:
                raise TreeParseError(f"bare token {toks[pos]!r} outside a POS pair")
            token = toks[pos]
            pos += 1
            if pos >= len(toks) or toks[pos] != ")":
                got = toks[pos] if pos < len(toks) else "end of input"
                if got == "end of input":
                    raise TreeParseError("unbalanced parentheses: missing ')'")
                raise TreeParseError(f"bare token {got!r} outside a POS pair")
            pos += 1
            node = ConstTree(label, token=_UNESCAPES.get(token, token), index=counter[0])
            counter[0] += 1
            return node
        children = []
        while pos < len(toks) and toks[pos] != ")":
            children.append(parse_node())
        if pos >= len(toks):
            raise TreeParseError("unbalanced parentheses: missing ')'")
        pos += 1
        if not children:
            raise TreeParseError(f"empty node {label!r}")
        if not label:
            if len(children) != 1:
                raise TreeParseError("unlabeled node with several children")
            return children[0]
        return ConstTree(label, children)

    tree = parse_node()
    if pos != len(toks):
        raise TreeParseError("unbalanced parentheses: trailing input after the tree")
    return tree


def to_bracketed(tree: ConstTree) -> str:
    if tree.is_leaf:
        return f"({tree.label} {_ESCAPES.get(tree.token, tree.token)})"
    return "(" + tree.label + " " + " ".join(to_bracketed(c) for c in tree.children) + ")"


def extract_chunks(tree: ConstTree) -> List[ChunkSpan]:
    """Minimal NP/VP chunks plus singleton chunks for the remaining tokens."""
    chunks: List[ChunkSpan] = []

    def visit(node: ConstTree) -> bool:
        # returns True when the subtree contains an NP/VP node
        if node.is_leaf:
            return False
        below = False
        for c in node.children:
            below = visit(c) or below
        is_chunk = node.base_label in CHUNK_LABELS
        if is_chunk and not below:
            s, e = node.span()
            chunks.append(ChunkSpan(node.base_label, s, e))
        return below or is_chunk

    visit(tree)
    n_tokens = len(tree.leaves())
    covered = [False] * n_tokens
    for c in chunks:
        for i in range(c.token_start, c.token_end):
            covered[i] = True
    chunks.extend(ChunkSpan(SINGLETON, i, i + 1) for i in range(n_tokens) if not covered[i])
    chunks.sort(key=lambda c: c.token_start)
    return chunks


def align_chunks_to_subwords(chunks: Sequence[ChunkSpan],
                             token_to_subword: Sequence[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """Subword range per chunk: the union of its tokens' subword ranges."""
    for t, (s, e) in enumerate(token_to_subword):
        if e <= s:
            raise ValueError(f"token {t} has an empty subword range")
    out = []
    for c in chunks:
        if c.token_end > len(token_to_subword):
            raise ValueError(f"chunk {c} exceeds the {len(token_to_subword)} mapped tokens")
        out.append((token_to_subword[c.token_start][0], token_to_subword[c.token_end - 1][1]))
    return out


def flat_tree(tokens: Sequence[str]) -> ConstTree:
    """A tree with no NP/VP nodes, so every token becomes a singleton."""
    return ConstTree("S", [ConstTree("X", token=t, index=i) for i, t in enumerate(tokens)])


def read_trees(path) -> List[ConstTree]:
    trees = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                trees.append(parse_bracketed(line))
            except TreeParseError as exc:
                raise TreeParseError(f"{path}:{lineno}: {exc}") from None
    return trees


def write_trees(path, trees: Sequence[ConstTree]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in trees:
            f.write(to_bracketed(t) + "\n")
