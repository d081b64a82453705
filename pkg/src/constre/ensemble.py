"""Prediction sets, ensemble member selection and hard-label voting."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

Key = Tuple[str, str, str]
PredictionSet = Dict[Key, FrozenSet[str]]

MAJORITY, PLURALITY = "majority", "plurality"
VOTE_MODES = (MAJORITY, PLURALITY)


class VoteError(ValueError):
    pass


def read_predictions(path, universe: Optional[Iterable[Key]] = None) -> PredictionSet:
    """Read a relations-format TSV into a prediction set.

    Keys in ``universe`` with no rows get an empty label set. Repeated
    rows for the same (key, label) collapse.
    """
    preds: Dict[Key, set] = {k: set() for k in (universe or ())}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 4 or not cols[2].startswith("Arg1:") or not cols[3].startswith("Arg2:"):
                raise ValueError(f"{path}:{lineno}: malformed relation row")
            doc_id, label, a1, a2 = cols
            preds.setdefault((doc_id, a1[5:], a2[5:]), set()).add(label)
    return {k: frozenset(v) for k, v in preds.items()}


def prediction_rows(preds: PredictionSet) -> List[str]:
    rows = []
    for key in sorted(preds):
        doc_id, subj, obj = key
        for label in sorted(preds[key]):
            rows.append(f"{doc_id}\t{label}\tArg1:{subj}\tArg2:{obj}")
    return rows


def write_predictions(path, preds: PredictionSet) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for row in prediction_rows(preds):
            f.write(row + "\n")


@dataclass(frozen=True)
class EnsembleMember:
    family: str
    checkpoint: str
    dev_f1: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dev_f1 <= 1.0:
            raise ValueError(f"dev_f1 {self.dev_f1} outside [0, 1]")


@dataclass
class EnsembleSpec:
    members: List[EnsembleMember]
    rule: str

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")


def parse_rule(rule: str) -> Tuple[str, int]:
    """``"drop_worst"`` or ``"top_k:4"`` / ``"top_k(4)"``."""
    rule = rule.strip()
    if rule == "drop_worst":
        return "drop_worst", 0
    for sep in (":", "("):
        if rule.startswith("top_k" + sep):
            return "top_k", int(rule[len("top_k") + 1:].rstrip(")"))
    raise ValueError(f"unknown selection rule {rule!r}")


def select_members(candidates: Sequence[EnsembleMember], rule: str) -> EnsembleSpec:
    """Keep members by dev F1; ties always favour the lower seed."""
    if not candidates:
        raise ValueError("no candidate models")
    kind, k = parse_rule(rule)
    ranked = sorted(candidates, key=lambda m: (-m.dev_f1, m.seed))
    if kind == "drop_worst":
        keep = ranked[:-1] if len(ranked) > 1 else ranked
    else:
        if k > len(candidates):
            raise ValueError(f"top_k({k}) requested from only {len(candidates)} candidates")
        if k < 1:
            raise ValueError("top_k needs k >= 1")
        keep = ranked[:k]
    keep = sorted(keep, key=lambda m: m.seed)
    return EnsembleSpec(keep, rule)


def vote_labels(member_sets: Sequence[FrozenSet[str]], mode: str = MAJORITY) -> FrozenSet[str]:
    """Combine one instance's member label sets.

    Every label attaining the top vote count wins, so a tie yields several
    labels. In ``majority`` mode the top count must also exceed half the
    members; in ``plurality`` mode any positive count suffices.
    """
    if mode not in VOTE_MODES:
        raise ValueError(f"unknown vote mode {mode!r}")
    votes = Counter()
    for s in member_sets:
        votes.update(set(s))
    if not votes:
        return frozenset()
    top = max(votes.values())
    if mode == MAJORITY and not top * 2 > len(member_sets):
        return frozenset()
    return frozenset(l for l, c in votes.items() if c == top)


def majority_vote(member_predictions: Sequence[PredictionSet], mode: str = MAJORITY) -> PredictionSet:
    if not member_predictions:
        raise VoteError("no member predictions to vote on")
    keys = set(member_predictions[0])
    for i, p in enumerate(member_predictions[1:], 1):
        if set(p) != keys:
            missing = len(keys ^ set(p))
            raise VoteError(f"member {i} covers a different instance set ({missing} keys differ)")
    return {k: vote_labels([p[k] for p in member_predictions], mode) for k in sorted(keys)}


def count_predictions_by_label(predictions: PredictionSet, labels: Iterable[str] = ()) -> Dict[str, int]:
    counts = {l: 0 for l in labels}
    for s in predictions.values():
        for l in s:
            counts[l] = counts.get(l, 0) + 1
    return counts


def union_universe(prediction_sets: Sequence[PredictionSet]) -> List[Key]:
    keys = set()
    for p in prediction_sets:
        keys.update(p)
    return sorted(keys)
