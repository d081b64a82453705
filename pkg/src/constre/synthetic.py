"""Small generated corpora with matching constituency trees, for tests and demos.

Each sentence comes from a handful of templates whose verb is the relation
cue, so label assignment is learnable from a single token.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import CHEMICAL, GENE, Corpus, Document, Entity, RelationAnnotation, save_corpus
from .preprocess import CandidateInstance, insert_markers, prepare_corpus
from .syntax import parse_bracketed

CHEMICALS = ["aspirin", "ibuprofen", "caffeine", "metformin", "naloxone", "rapamycin",
             "cisplatin", "tamoxifen", "acetyl salicylate", "valproic acid"]
GENES = ["COX2", "EGFR", "TP53", "BRCA1", "AKT1", "MTOR", "CYP3A4", "ESR1", "HDAC1", "PTGS1"]

DEFAULT_CUES = {"ACTIVATOR": "activates", "INHIBITOR": "inhibits"}


def _np(words: Sequence[str], tags: Sequence[str]) -> str:
    return "(NP " + " ".join(f"({t} {w})" for t, w in zip(tags, words)) + ")"


def _chem_np(chem: str, det: bool) -> Tuple[List[str], str]:
    words = chem.split()
    tags = ["NN"] * len(words)
    if len(words) > 1:
        tags[0] = "JJ"
    if det:
        words, tags = ["The"] + words, ["DT"] + tags
    return words, _np(words, tags)


@dataclass
class SyntheticSentence:
    text: str
    tree: str
    # (surface, etype, char start) for every mention
    mentions: List[Tuple[str, str, int]]
    # (chem mention index, gene mention index, label)
    relations: List[Tuple[int, int, str]]


def _compose(pieces: List[Tuple[str, Optional[str]]]):
    text, mentions = "", []
    for surface, etype in pieces:
        if text and surface not in (".",):
            text += " "
        if etype:
            mentions.append((surface, etype, len(text)))
        text += surface
    return text, mentions


def make_sentence(rng: np.random.Generator, cues: Dict[str, str], label: Optional[str],
                  template: Optional[int] = None) -> SyntheticSentence:
    """One sentence; ``label=None`` gives a negative pair."""
    chem = CHEMICALS[rng.integers(len(CHEMICALS))]
    g1, g2 = (GENES[i] for i in rng.choice(len(GENES), 2, replace=False))
    if label is None:
        chem = chem[0].upper() + chem[1:]
        _, np_tree = _chem_np(chem, det=False)
        text, mentions = _compose([(chem, CHEMICAL), ("was", None), ("tested", None), ("with", None),
                                   (g1, GENE), (".", None)])
        tree = (f"(S {np_tree} (VP (VBD was) (VP (VBN tested) (PP (IN with) {_np([g1], ['NN'])}))) (. .))")
        return SyntheticSentence(text, tree, mentions, [])
    verb = cues[label]
    if template is None:
        template = int(rng.integers(2))
    if template == 0:
        _, np_tree = _chem_np(chem, det=True)
        text, mentions = _compose([("The", None), (chem, CHEMICAL), (verb, None), (g1, GENE), (".", None)])
        tree = f"(S {np_tree} (VP (VBZ {verb}) {_np([g1], ['NN'])}) (. .))"
        return SyntheticSentence(text, tree, mentions, [(0, 1, label)])
    chem = chem[0].upper() + chem[1:]
    _, np_tree = _chem_np(chem, det=False)
    text, mentions = _compose([(chem, CHEMICAL), (verb, None), (g1, GENE), ("but", None), ("not", None),
                               (g2, GENE), (".", None)])
    tree = (f"(S {np_tree} (VP (VBZ {verb}) (NP {_np([g1], ['NN'])} (CONJP (CC but) (RB not)) "
            f"{_np([g2], ['NN'])})) (. .))")
    return SyntheticSentence(text, tree, mentions, [(0, 1, label)])


def make_corpus(n_docs: int, seed: int = 0, cues: Optional[Dict[str, str]] = None,
                label_probs: Optional[Dict[str, float]] = None, negative_rate: float = 0.25,
                sentences_per_doc: int = 2, prefix: str = "D"):
    """A corpus plus a ``sentence text -> bracketed tree`` lookup.

    ``label_probs`` sets how often each cue label is drawn (uniform by
    default); with ``negative_rate`` a sentence carries no relation.
    """
    cues = dict(DEFAULT_CUES if cues is None else cues)
    labels = sorted(cues)
    probs = np.array([(label_probs or {}).get(l, 1.0) for l in labels], dtype=float)
    probs /= probs.sum()
    rng = np.random.default_rng(seed)
    corpus = Corpus()
    trees: Dict[str, str] = {}
    for d in range(n_docs):
        doc_id = f"{prefix}{d + 1}"
        title = f"Synthetic study {d + 1}"
        sents = []
        for _ in range(sentences_per_doc):
            label = None if rng.random() < negative_rate else labels[rng.choice(len(labels), p=probs)]
            sents.append(make_sentence(rng, cues, label))
        abstract = " ".join(s.text for s in sents)
        doc = Document(doc_id, title, abstract)
        corpus.documents[doc_id] = doc
        ents = corpus.entities.setdefault(doc_id, {})
        base = len(title) + 1
        for s in sents:
            trees[s.text] = s.tree
            ids = []
            for surface, etype, start in s.mentions:
                eid = f"T{len(ents) + 1}"
                ents[eid] = Entity(eid, doc_id, etype, base + start, base + start + len(surface), surface,
                                   raw_type=etype)
                ids.append(eid)
            for ci, gi, label in s.relations:
                corpus.relations.append(RelationAnnotation(doc_id, label, ids[ci], ids[gi]))
            base += len(s.text) + 1
    return corpus, trees


def make_instances(n: int, seed: int = 0, cues: Optional[Dict[str, str]] = None,
                   negatives: int = 0) -> List[Tuple[CandidateInstance, str]]:
    """``n`` single-pair instances with balanced cue labels plus ``negatives``."""
    cues = dict(DEFAULT_CUES if cues is None else cues)
    labels = sorted(cues)
    rng = np.random.default_rng(seed)
    out = []
    plan = [labels[i % len(labels)] for i in range(n - negatives)] + [None] * negatives
    for i, label in enumerate(plan):
        s = make_sentence(rng, cues, label, template=0 if label else None)
        (c, _, cs), (g, _, gs) = s.mentions[0], s.mentions[1]
        marked, overlap = insert_markers(s.text, (cs, cs + len(c)), (gs, gs + len(g)))
        labels_i = frozenset([label]) if label else frozenset()
        out.append((CandidateInstance(f"S{i + 1}", 0, "T1", "T2", marked, labels_i, overlap), s.tree))
    return out


def write_split(directory, name: str, corpus: Corpus, trees: Dict[str, str], with_relations: bool = True):
    """Write the corpus TSVs and a trees file aligned with the prepared sentences."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "abstracts": directory / f"{name}_abstracts.tsv",
        "entities": directory / f"{name}_entities.tsv",
        "relations": directory / f"{name}_relations.tsv",
        "trees": directory / f"{name}.trees",
    }
    save_corpus(corpus, paths["abstracts"], paths["entities"], paths["relations"] if with_relations else None)
    if not with_relations:
        del paths["relations"]
    _, sentence_rows, _ = prepare_corpus(corpus)
    with open(paths["trees"], "w", encoding="utf-8") as f:
        f.write("# synthetic trees, one per prepared sentence\n")
        for _, _, text in sentence_rows:
            tree = trees[text]
            parse_bracketed(tree)
            f.write(tree + "\n")
    return paths
