"""Sentence splitting, entity-to-sentence mapping, candidate pairs and marker tagging."""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple

from .corpus import CHEMICAL, GENE, Corpus, Document, Entity, RelationAnnotation
from .text import OBJECT_MARKER, OVERLAP_MARKER, SUBJECT_MARKER, Token, pre_split, strip_markers

ABBREVIATIONS = (
    "Fig.", "Figs.", "fig.", "et al.", "e.g.", "i.e.", "vs.", "cf.", "approx.",
    "Dr.", "Prof.", "No.", "Eq.", "Ref.", "ca.", "resp.", "Inc.", "Ltd.",
)

_BOUNDARY_RE = re.compile(r"[.?!](?=\s+[A-Z0-9])")


@dataclass(frozen=True)
class Sentence:
    doc_id: str
    index: int
    start: int
    end: int
    tokens: Tuple[Token, ...]

    def text(self, document: Document) -> str:
        return document.full_text[self.start:self.end]

    def contains(self, start: int, end: int) -> bool:
        return self.start <= start and end <= self.end


@dataclass(frozen=True)
class CandidateInstance:
    doc_id: str
    sentence_index: int
    subject_id: str
    object_id: str
    marked_text: str
    gold_labels: FrozenSet[str] = frozenset()
    overlap_case: bool = False

    @property
    def key(self) -> Tuple[str, str, str]:
        return self.doc_id, self.subject_id, self.object_id

    @property
    def sentence_text(self) -> str:
        return strip_markers(self.marked_text)


@dataclass
class PrepReport:
    split_word_errors: List[str] = field(default_factory=list)
    cross_sentence_relations: List[RelationAnnotation] = field(default_factory=list)
    # relations whose arguments are not a CHEMICAL -> GENE pair
    unmatched_relations: List[RelationAnnotation] = field(default_factory=list)
    corrected: int = 0

    def extend(self, other: "PrepReport") -> None:
        self.split_word_errors.extend(other.split_word_errors)
        self.cross_sentence_relations.extend(other.cross_sentence_relations)
        self.unmatched_relations.extend(other.unmatched_relations)
        self.corrected += other.corrected

    def lines(self) -> List[str]:
        out = [f"split-word\t{e}" for e in self.split_word_errors]
        out += [f"cross-sentence\t{r.doc_id}\t{r.label}\tArg1:{r.subject_id}\tArg2:{r.object_id}"
                for r in self.cross_sentence_relations]
        out += [f"unmatched\t{r.doc_id}\t{r.label}\tArg1:{r.subject_id}\tArg2:{r.object_id}"
                for r in self.unmatched_relations]
        out.append(f"corrected\t{self.corrected}")
        return out


def _ends_with_abbreviation(text: str, dot: int) -> bool:
    head = text[:dot + 1]
    for abbr in ABBREVIATIONS:
        if head.endswith(abbr):
            before = len(head) - len(abbr) - 1
            if before < 0 or not text[before].isalnum():
                return True
    return False


def _split_region(text: str, region_start: int, region_end: int) -> List[Tuple[int, int]]:
    region = text[region_start:region_end]
    cuts = [0]
    for m in _BOUNDARY_RE.finditer(region):
        if not _ends_with_abbreviation(region, m.start()):
            cuts.append(m.end())
    cuts.append(len(region))
    spans = []
    for a, b in zip(cuts, cuts[1:]):
        chunk = region[a:b]
        stripped = chunk.strip()
        if not stripped:
            continue
        lead = len(chunk) - len(chunk.lstrip())
        s = region_start + a + lead
        spans.append((s, s + len(stripped)))
    return spans


def _make_sentences(doc: Document, spans: Sequence[Tuple[int, int]]) -> List[Sentence]:
    text = doc.full_text
    return [Sentence(doc.doc_id, i, s, e, tuple(pre_split(text[s:e], s))) for i, (s, e) in enumerate(spans)]


def segment_sentences(document: Document) -> List[Sentence]:
    """Rule-based splitter over the title and abstract.

    A boundary is a ``.``, ``?`` or ``!`` followed by whitespace and an
    uppercase letter or digit, unless the period closes a known
    abbreviation. The title/abstract newline is always a boundary.
    """
    n_title = len(document.title)
    spans = _split_region(document.full_text, 0, n_title)
    spans += _split_region(document.full_text, n_title + 1, len(document.full_text))
    if not spans and document.full_text.strip():
        stripped = document.full_text.strip()
        s = document.full_text.index(stripped)
        spans = [(s, s + len(stripped))]
    return _make_sentences(document, spans)


def _overlapping(sentences: Sequence[Sentence], start: int, end: int) -> List[int]:
    return [i for i, s in enumerate(sentences) if s.start < end and start < s.end]


def map_entities(document: Document, entities: Iterable[Entity], sentences: Sequence[Sentence]):
    """Assign entities to sentences, merging sentences an entity straddles.

    Returns ``(sentences, assignment, report)`` where ``assignment`` maps a
    sentence index to its entities in span order.
    """
    entities = sorted(entities, key=lambda e: (e.start, e.end, e.entity_id))
    spans = [(s.start, s.end) for s in sentences]
    report = PrepReport()
    changed = True
    while changed:
        changed = False
        for ent in entities:
            hit = [i for i, (s, e) in enumerate(spans) if s < ent.end and ent.start < e]
            if len(hit) > 1:
                lo, hi = hit[0], hit[-1]
                report.split_word_errors.append(
                    f"{document.doc_id}\t{ent.entity_id}\t{ent.surface}\tsentences {lo}-{hi}")
                spans[lo:hi + 1] = [(spans[lo][0], spans[hi][1])]
                report.corrected += 1
                changed = True
                break
    merged = _make_sentences(document, spans) if report.corrected else list(sentences)

    assignment: Dict[int, List[Entity]] = defaultdict(list)
    for ent in entities:
        hit = _overlapping(merged, ent.start, ent.end)
        if not hit:
            # entity sits in inter-sentence whitespace: attach to the closest preceding sentence
            before = [i for i, s in enumerate(merged) if s.end <= ent.start]
            idx = before[-1] if before else 0
            report.split_word_errors.append(
                f"{document.doc_id}\t{ent.entity_id}\t{ent.surface}\toutside sentences, attached to {idx}")
            hit = [idx]
        assignment[hit[0]].append(ent)
    return merged, dict(assignment), report


def insert_markers(sentence_text: str, subject_span: Tuple[int, int], object_span: Tuple[int, int]):
    """Tag the subject with ``@@`` and the object with ``$$``.

    Overlapping arguments get a single ``¢¢`` pair around the union of
    their spans. Returns ``(marked_text, overlap_case)``.
    """
    n = len(sentence_text)
    for s, e in (subject_span, object_span):
        if not (0 <= s < e <= n):
            raise ValueError(f"span ({s},{e}) outside sentence of length {n}")
    (s1, e1), (s2, e2) = subject_span, object_span
    t = sentence_text
    if s1 < e2 and s2 < e1:
        s, e = min(s1, s2), max(e1, e2)
        return t[:s] + OVERLAP_MARKER + t[s:e] + OVERLAP_MARKER + t[e:], True
    inserts = sorted([(s1, e1, SUBJECT_MARKER), (s2, e2, OBJECT_MARKER)], reverse=True)
    for s, e, m in inserts:
        t = t[:s] + m + t[s:e] + m + t[e:]
    return t, False


def enumerate_candidates(document: Document, sentences: Sequence[Sentence],
                         assignment: Dict[int, List[Entity]],
                         relations: Iterable[RelationAnnotation]):
    """Emit one instance per CHEMICAL x GENE pair inside a sentence.

    Returns ``(instances, report)``; the report lists gold relations that
    could not be attached to an instance.
    """
    gold: Dict[Tuple[str, str], set] = defaultdict(set)
    rels = list(relations)
    for r in rels:
        gold[(r.subject_id, r.object_id)].add(r.label)

    sentence_of = {}
    for idx, ents in assignment.items():
        for ent in ents:
            sentence_of[ent.entity_id] = (idx, ent)

    instances: List[CandidateInstance] = []
    attached = set()
    for sent in sentences:
        ents = assignment.get(sent.index, [])
        chems = [e for e in ents if e.etype == CHEMICAL]
        genes = [e for e in ents if e.etype == GENE]
        if not chems or not genes:
            continue
        text = sent.text(document)
        for subj in chems:
            for obj in genes:
                marked, overlap = insert_markers(
                    text,
                    (subj.start - sent.start, subj.end - sent.start),
                    (obj.start - sent.start, obj.end - sent.start))
                labels = frozenset(gold.get((subj.entity_id, obj.entity_id), ()))
                if labels:
                    attached.add((subj.entity_id, obj.entity_id))
                instances.append(CandidateInstance(
                    document.doc_id, sent.index, subj.entity_id, obj.entity_id, marked, labels, overlap))

    report = PrepReport()
    for r in rels:
        if (r.subject_id, r.object_id) in attached:
            continue
        s, o = sentence_of.get(r.subject_id), sentence_of.get(r.object_id)
        if s is not None and o is not None and s[1].etype == CHEMICAL and o[1].etype == GENE and s[0] != o[0]:
            report.cross_sentence_relations.append(r)
        else:
            report.unmatched_relations.append(r)
    return instances, report


@dataclass
class PreparedDocument:
    document: Document
    sentences: List[Sentence]
    instances: List[CandidateInstance]
    report: PrepReport


def _prepare(doc: Document, entities, relations) -> PreparedDocument:
    sentences = segment_sentences(doc)
    sentences, assignment, report = map_entities(doc, entities, sentences)
    instances, rep2 = enumerate_candidates(doc, sentences, assignment, relations)
    report.extend(rep2)
    return PreparedDocument(doc, sentences, instances, report)


def prepare_document(corpus: Corpus, doc_id: str) -> PreparedDocument:
    return _prepare(corpus.documents[doc_id], corpus.doc_entities(doc_id), corpus.doc_relations(doc_id))


def prepare_corpus(corpus: Corpus):
    """Run the whole preparation over a corpus in document order.

    Returns ``(instances, sentence_rows, report)``; ``sentence_rows`` lists
    ``(doc_id, index, text)`` for every sentence with at least one
    instance, in instance order (the order trees must follow).
    """
    instances: List[CandidateInstance] = []
    sentence_rows = []
    report = PrepReport()
    by_doc = defaultdict(list)
    for r in corpus.relations:
        by_doc[r.doc_id].append(r)
    for doc_id, doc in corpus.documents.items():
        prep = _prepare(doc, corpus.doc_entities(doc_id), by_doc.get(doc_id, ()))
        report.extend(prep.report)
        for idx in sorted({i.sentence_index for i in prep.instances}):
            sentence_rows.append((doc_id, idx, prep.sentences[idx].text(doc)))
        instances.extend(prep.instances)
    return instances, sentence_rows, report


def sentence_order(instances: Iterable[CandidateInstance]) -> List[Tuple[str, int]]:
    """Distinct ``(doc_id, sentence_index)`` pairs in first-appearance order."""
    seen = {}
    for inst in instances:
        seen.setdefault((inst.doc_id, inst.sentence_index), None)
    return list(seen)


def write_instances(path, instances: Iterable[CandidateInstance]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for i in instances:
            labels = "|".join(sorted(i.gold_labels))
            f.write(f"{i.doc_id}\t{i.sentence_index}\t{i.subject_id}\t{i.object_id}\t"
                    f"{int(i.overlap_case)}\t{i.marked_text}\t{labels}\n")


def read_instances(path) -> List[CandidateInstance]:
    out = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 columns, got {len(cols)}")
            doc_id, sidx, subj, obj, flag, marked, labels = cols
            out.append(CandidateInstance(doc_id, int(sidx), subj, obj, marked,
                                         frozenset(l for l in labels.split("|") if l), flag == "1"))
    return out


def write_sentences(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for doc_id, idx, text in rows:
            f.write(f"{doc_id}\t{idx}\t{text}\n")


def read_sentences(path) -> List[Tuple[str, int, str]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for line in f:
            line = line.rstrip("\r\n")
            if line:
                doc_id, idx, text = line.split("\t", 2)
                rows.append((doc_id, int(idx), text))
    return rows
