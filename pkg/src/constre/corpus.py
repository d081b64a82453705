"""DrugProt-style corpus loading: abstracts, entities and relations from TSV."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

CHEMICAL = "CHEMICAL"
GENE = "GENE"

# DrugProt splits genes into GENE-Y / GENE-N (normalisable or not); both are genes here.
ENTITY_TYPE_MAP = {
    "CHEMICAL": CHEMICAL,
    "GENE": GENE,
    "GENE-Y": GENE,
    "GENE-N": GENE,
}


class CorpusError(ValueError):
    """Raised when corpus files fail validation.

    ``issues`` holds every problem found, each already prefixed with
    ``file:line``.
    """

    def __init__(self, issues: Sequence[str], diagnostic: str = ""):
        self.issues = list(issues)
        self.diagnostic = diagnostic
        msg = "\n".join(self.issues)
        if diagnostic:
            msg += "\n" + diagnostic
        super().__init__(msg)


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    abstract_text: str

    @property
    def full_text(self) -> str:
        # entity offsets index into this joined space
        return self.title + "\n" + self.abstract_text


@dataclass(frozen=True)
class Entity:
    entity_id: str
    doc_id: str
    etype: str
    start: int
    end: int
    surface: str
    raw_type: str = ""

    @property
    def span(self) -> Tuple[int, int]:
        return self.start, self.end


@dataclass(frozen=True)
class RelationAnnotation:
    doc_id: str
    label: str
    subject_id: str
    object_id: str

    @property
    def pair_key(self) -> Tuple[str, str, str]:
        return self.doc_id, self.subject_id, self.object_id


@dataclass
class Corpus:
    documents: Dict[str, Document] = field(default_factory=dict)
    entities: Dict[str, Dict[str, Entity]] = field(default_factory=dict)
    relations: List[RelationAnnotation] = field(default_factory=list)
    has_relations: bool = True

    def doc_entities(self, doc_id: str) -> List[Entity]:
        return sorted(self.entities.get(doc_id, {}).values(), key=lambda e: (e.start, e.end, e.entity_id))

    def doc_relations(self, doc_id: str) -> List[RelationAnnotation]:
        return [r for r in self.relations if r.doc_id == doc_id]

    def __len__(self) -> int:
        return len(self.documents)


@dataclass(frozen=True)
class LabelCatalog:
    """Ordered relation types; the order is the index space of every label vector."""

    labels: Tuple[str, ...]
    counts: Tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.counts):
            raise ValueError("labels and counts differ in length")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in catalog")
        if any(c < 1 for c in self.counts):
            raise ValueError("every catalog label needs a count >= 1")

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def count_of(self, label: str) -> int:
        return self.counts[self.labels.index(label)]

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelCatalog":
        return cls(tuple(d["labels"]), tuple(int(c) for c in d["counts"]))


def _read_rows(path: Path, n_cols: int, issues: List[str], last_col_free: bool = False):
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if last_col_free:
                cols = line.split("\t", n_cols - 1)
            else:
                cols = line.split("\t")
            if len(cols) != n_cols:
                issues.append(f"{path}:{lineno}: expected {n_cols} columns, got {len(cols)}")
                continue
            yield lineno, cols


def _parse_arg(value: str, prefix: str) -> Optional[str]:
    if not value.startswith(prefix + ":"):
        return None
    return value[len(prefix) + 1:] or None


def _offset_shift_diagnostic(documents, raw_entities) -> str:
    # Look for a uniform +/-1 shift that would make every entity line up.
    if not raw_entities:
        return ""
    for shift in (-1, 1):
        ok = True
        for ent in raw_entities:
            doc = documents.get(ent.doc_id)
            if doc is None:
                ok = False
                break
            s, e = ent.start + shift, ent.end + shift
            if s < 0 or doc.full_text[s:e] != ent.surface:
                ok = False
                break
        if ok:
            return (f"diagnostic: a uniform offset shift of {shift:+d} makes all "
                    f"{len(raw_entities)} entity surfaces match; check the title/abstract separator")
    return ""


def load_corpus(abstracts_path, entities_path, relations_path=None) -> Corpus:
    """Load and cross-validate a corpus from its three TSV files.

    All problems are collected and raised together in one ``CorpusError``.
    """
    abstracts_path = Path(abstracts_path)
    entities_path = Path(entities_path)
    issues: List[str] = []
    corpus = Corpus(has_relations=relations_path is not None)

    for lineno, (doc_id, title, abstract) in _read_rows(abstracts_path, 3, issues, last_col_free=True):
        if not doc_id:
            issues.append(f"{abstracts_path}:{lineno}: empty doc_id")
        elif doc_id in corpus.documents:
            issues.append(f"{abstracts_path}:{lineno}: duplicate doc_id {doc_id!r}")
        else:
            corpus.documents[doc_id] = Document(doc_id, title, abstract)

    parsed: List[Tuple[int, Entity]] = []
    for lineno, (doc_id, ent_id, etype, start, end, text) in _read_rows(entities_path, 6, issues, last_col_free=True):
        where = f"{entities_path}:{lineno}"
        try:
            s, e = int(start), int(end)
        except ValueError:
            issues.append(f"{where}: non-integer offsets for entity {ent_id!r}")
            continue
        if etype not in ENTITY_TYPE_MAP:
            issues.append(f"{where}: unknown entity type {etype!r} for entity {ent_id!r}")
            continue
        parsed.append((lineno, Entity(ent_id, doc_id, ENTITY_TYPE_MAP[etype], s, e, text, raw_type=etype)))

    mismatched = []
    for lineno, ent in parsed:
        where = f"{entities_path}:{lineno}"
        doc = corpus.documents.get(ent.doc_id)
        if doc is None:
            issues.append(f"{where}: entity {ent.entity_id!r} references unknown document {ent.doc_id!r}")
            continue
        text = doc.full_text
        if not (0 <= ent.start < ent.end <= len(text)):
            issues.append(f"{where}: entity {ent.entity_id!r} span ({ent.start},{ent.end}) out of range")
            mismatched.append(ent)
            continue
        if text[ent.start:ent.end] != ent.surface:
            issues.append(f"{where}: span mismatch for entity {ent.entity_id!r}: "
                          f"text has {text[ent.start:ent.end]!r}, row has {ent.surface!r}")
            mismatched.append(ent)
            continue
        doc_ents = corpus.entities.setdefault(ent.doc_id, {})
        if ent.entity_id in doc_ents:
            issues.append(f"{where}: duplicate entity id {ent.entity_id!r} in {ent.doc_id!r}")
            continue
        doc_ents[ent.entity_id] = ent

    if relations_path is not None:
        relations_path = Path(relations_path)
        seen = set()
        for lineno, (doc_id, label, arg1, arg2) in _read_rows(relations_path, 4, issues):
            where = f"{relations_path}:{lineno}"
            subj, obj = _parse_arg(arg1, "Arg1"), _parse_arg(arg2, "Arg2")
            if subj is None or obj is None:
                issues.append(f"{where}: malformed argument columns {arg1!r} {arg2!r}")
                continue
            ents = corpus.entities.get(doc_id, {})
            dangling = [x for x in (subj, obj) if x not in ents]
            if doc_id not in corpus.documents or dangling:
                issues.append(f"{where}: dangling entity reference {', '.join(dangling) or subj} in {doc_id!r}")
                continue
            rel = RelationAnnotation(doc_id, label, subj, obj)
            if rel in seen:
                issues.append(f"{where}: duplicate relation {label} {subj}->{obj} in {doc_id!r}")
                continue
            seen.add(rel)
            corpus.relations.append(rel)

    if issues:
        diag = _offset_shift_diagnostic(corpus.documents, mismatched) if mismatched else ""
        raise CorpusError(issues, diag)
    return corpus


def build_label_catalog(corpus: Corpus) -> LabelCatalog:
    if not corpus.relations:
        raise ValueError("cannot build a label catalog from an empty relation set")
    counts = Counter(r.label for r in corpus.relations)
    labels = tuple(sorted(counts))
    return LabelCatalog(labels, tuple(counts[l] for l in labels))


def abstract_rows(corpus: Corpus) -> List[str]:
    return [f"{d.doc_id}\t{d.title}\t{d.abstract_text}" for d in corpus.documents.values()]


def entity_rows(corpus: Corpus) -> List[str]:
    rows = []
    for doc_id in corpus.documents:
        for ent in corpus.entities.get(doc_id, {}).values():
            etype = ent.raw_type or ent.etype
            rows.append(f"{doc_id}\t{ent.entity_id}\t{etype}\t{ent.start}\t{ent.end}\t{ent.surface}")
    return rows


def relation_rows(relations: Iterable[RelationAnnotation]) -> List[str]:
    return [f"{r.doc_id}\t{r.label}\tArg1:{r.subject_id}\tArg2:{r.object_id}" for r in relations]


def write_rows(path, rows: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for row in rows:
            f.write(row + "\n")


def save_corpus(corpus: Corpus, abstracts_path, entities_path, relations_path=None) -> None:
    write_rows(abstracts_path, abstract_rows(corpus))
    write_rows(entities_path, entity_rows(corpus))
    if relations_path is not None:
        write_rows(relations_path, relation_rows(corpus.relations))


def read_label_counts(path) -> Dict[str, int]:
    """Read a ``label<TAB>count`` file."""
    issues: List[str] = []
    out = {}
    for lineno, (label, count) in _read_rows(Path(path), 2, issues):
        try:
            out[label] = int(count)
        except ValueError:
            issues.append(f"{path}:{lineno}: non-integer count {count!r}")
    if issues:
        raise CorpusError(issues)
    return out
