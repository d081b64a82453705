"""Stage wiring: prepare -> parse-import -> train -> predict -> vote -> evaluate -> analyze.

Every stage writes under ``<work_dir>/<stage>/`` and drops a ``.stamp``
file holding a hash of its inputs and settings; a rerun skips a stage
whose stamp still matches and whose outputs are all present.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import LabelCatalog, build_label_catalog, load_corpus, write_rows
from .encoder import EncoderConfig, encode_instance, predict_proba
from .ensemble import (EnsembleMember, count_predictions_by_label, majority_vote, read_predictions,
                       select_members, write_predictions)
from .evaluate import evaluate, render_report
from .preprocess import (CandidateInstance, prepare_corpus, read_instances, sentence_order,
                         write_instances, write_sentences)
from .syntax import ConstTree, flat_tree, read_trees, write_trees
from .text import pre_split
from .tokenization import SubwordVocab, build_vocab
from .training import Example, TrainConfig, decide_labels, train_one

log = logging.getLogger(__name__)

WORKERS_ENV = "CONSTRE_WORKERS"
SPLITS = ("train", "dev", "test")


class StageError(RuntimeError):
    def __init__(self, stage: str, error: BaseException):
        self.stage = stage
        self.error = error
        super().__init__(f"stage {stage!r} failed: {error}")


# ---------------------------------------------------------------- config files

def read_kv(path) -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment line."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _coerce(cls, values: Dict[str, str]):
    kwargs = {}
    types = {f.name: f.type for f in fields(cls)}
    for k, v in values.items():
        if k not in types:
            raise ValueError(f"unknown {cls.__name__} key {k!r}")
        t = types[k] if isinstance(types[k], str) else types[k].__name__
        kwargs[k] = int(v) if t == "int" else float(v) if t == "float" else v
    return cls(**kwargs)


def configs_from_kv(kv: Dict[str, str]) -> Tuple[EncoderConfig, TrainConfig]:
    enc = {k[len("encoder."):]: v for k, v in kv.items() if k.startswith("encoder.")}
    tr = {k[len("training."):]: v for k, v in kv.items() if k.startswith("training.")}
    return _coerce(EncoderConfig, enc), _coerce(TrainConfig, tr)


@dataclass
class SplitPaths:
    abstracts: Path
    entities: Path
    relations: Optional[Path] = None
    trees: Optional[Path] = None


@dataclass
class PipelineConfig:
    work_dir: Path
    splits: Dict[str, SplitPaths]
    encoder: EncoderConfig
    training: TrainConfig
    families: List[str] = field(default_factory=lambda: ["plain", "const"])
    seeds: List[int] = field(default_factory=lambda: list(range(8)))
    selection: str = "drop_worst"
    vote_mode: str = "majority"
    min_freq: int = 2
    train_counts: Optional[Path] = None
    config_dir: Path = Path(".")

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        kv = read_kv(path)
        base = path.parent

        def p(v):
            q = Path(v)
            return q if q.is_absolute() else base / q

        splits = {}
        for split in SPLITS:
            keys = {k.split(".", 2)[2]: v for k, v in kv.items() if k.startswith(f"data.{split}.")}
            if not keys:
                continue
            if "abstracts" not in keys or "entities" not in keys:
                raise ValueError(f"data.{split} needs abstracts and entities")
            splits[split] = SplitPaths(p(keys["abstracts"]), p(keys["entities"]),
                                       p(keys["relations"]) if "relations" in keys else None,
                                       p(keys["trees"]) if "trees" in keys else None)
        for split in ("train", "dev", "test"):
            if split not in splits:
                raise ValueError(f"config lacks data.{split}.* paths")
        enc, tr = configs_from_kv(kv)
        cfg = cls(
            work_dir=p(kv.get("work_dir", "work")),
            splits=splits,
            encoder=enc,
            training=tr,
            families=[f.strip() for f in kv.get("families", "plain,const").split(",") if f.strip()],
            seeds=[int(s) for s in kv.get("seeds", "0,1,2,3,4,5,6,7").split(",") if s.strip()],
            selection=kv.get("selection", "drop_worst"),
            vote_mode=kv.get("vote_mode", "majority"),
            min_freq=int(kv.get("vocab.min_freq", "2")),
            train_counts=p(kv["train_counts"]) if "train_counts" in kv else None,
            config_dir=base,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for split, sp in self.splits.items():
            for name in ("abstracts", "entities", "relations", "trees"):
                q = getattr(sp, name)
                if q is not None and not q.exists():
                    raise FileNotFoundError(f"data.{split}.{name}: {q} does not exist")
        if self.splits["train"].relations is None or self.splits["dev"].relations is None:
            raise ValueError("train and dev splits need relation files")
        for fam in self.families:
            if fam not in ("plain", "const"):
                raise ValueError(f"unknown family {fam!r}")


# ---------------------------------------------------------------- helpers

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _stamp(inputs: Sequence[Path], settings: dict) -> str:
    h = hashlib.sha256(json.dumps(settings, sort_keys=True, default=str).encode())
    for q in inputs:
        h.update(str(Path(q).name).encode())
        h.update(file_hash(q).encode())
    return h.hexdigest()


def run_stage(name: str, out_dir: Path, inputs: Sequence[Path], settings: dict,
              outputs: Callable[[], List[Path]], fn: Callable[[], None]) -> bool:
    """Run ``fn`` unless the stage's stamp is current. Returns True if it ran."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp_path = out_dir / ".stamp"
    try:
        stamp = _stamp(inputs, settings)
    except OSError as exc:
        raise StageError(name, exc) from exc
    if stamp_path.exists() and stamp_path.read_text() == stamp and all(q.exists() for q in outputs()):
        log.info("stage %s: up to date, skipped", name)
        return False
    log.info("stage %s: running", name)
    try:
        fn()
    except Exception as exc:
        raise StageError(name, exc) from exc
    stamp_path.write_text(stamp)
    return True


def trees_by_sentence(instances: Sequence[CandidateInstance], trees: Sequence[ConstTree]):
    order = sentence_order(instances)
    if len(order) != len(trees):
        raise ValueError(f"trees file has {len(trees)} trees for {len(order)} instance sentences")
    return dict(zip(order, trees))


def check_tree_alignment(instances: Sequence[CandidateInstance], trees: Sequence[ConstTree]):
    """Compare tree leaves with the sentence tokenization.

    Returns ``(aligned_trees, mismatch_messages)``; a mismatching tree is
    replaced by a flat tree over the sentence tokens.
    """
    order = sentence_order(instances)
    if len(order) != len(trees):
        raise ValueError(f"trees file has {len(trees)} trees for {len(order)} instance sentences")
    text_of = {}
    for inst in instances:
        text_of.setdefault((inst.doc_id, inst.sentence_index), inst.sentence_text)
    aligned, problems = [], []
    for key, tree in zip(order, trees):
        tokens = [t[0] for t in pre_split(text_of[key])]
        leaves = tree.tokens()
        if leaves != tokens:
            problems.append(f"{key[0]}\t{key[1]}\ttree {' '.join(leaves)!r} != sentence {' '.join(tokens)!r}")
            aligned.append(flat_tree(tokens))
        else:
            aligned.append(tree)
    return aligned, problems


def catalog_from_instances(instances: Sequence[CandidateInstance]) -> LabelCatalog:
    from collections import Counter
    c = Counter(l for i in instances for l in i.gold_labels)
    if not c:
        raise ValueError("no labelled instances to build a label catalog from")
    labels = tuple(sorted(c))
    return LabelCatalog(labels, tuple(c[l] for l in labels))


def build_examples(instances: Sequence[CandidateInstance], vocab: SubwordVocab, family: str,
                   trees: Optional[Sequence[ConstTree]] = None) -> List[Example]:
    lookup = None
    if family == "const":
        if trees is None:
            raise ValueError("the const family needs a trees file")
        lookup = trees_by_sentence(instances, trees)
    out = []
    for inst in instances:
        tree = lookup[(inst.doc_id, inst.sentence_index)] if lookup else None
        out.append(Example(encode_instance(inst.marked_text, vocab, family, tree), inst.gold_labels))
    return out


def predict(ckpt: Checkpoint, instances: Sequence[CandidateInstance],
            trees: Optional[Sequence[ConstTree]] = None, labels: Optional[Sequence[str]] = None):
    """Label sets per instance key using the inclusive 0.5 threshold."""
    if labels is not None and tuple(labels) != ckpt.catalog.labels:
        raise ValueError("checkpoint label catalog differs from the requested labels")
    if not instances:
        return {}
    examples = build_examples(instances, ckpt.vocab, ckpt.config.family, trees)
    probs = predict_proba(ckpt.params, ckpt.config, [e.encoded for e in examples], pad_id=ckpt.vocab.pad_id)
    return {inst.key: s for inst, s in zip(instances, decide_labels(probs, ckpt.catalog))}


def _train_job(job):
    (family, seed, train_inst, dev_inst, train_trees, dev_trees, vocab_pieces, catalog_d,
     enc_d, tr_d, out_ckpt, out_log) = job
    vocab = SubwordVocab(vocab_pieces)
    catalog = LabelCatalog.from_dict(catalog_d)
    enc = EncoderConfig.from_dict(dict(enc_d, family=family))
    tr = TrainConfig(**tr_d)
    ttrees = read_trees(train_trees) if family == "const" else None
    dtrees = read_trees(dev_trees) if family == "const" else None
    train = build_examples(read_instances(train_inst), vocab, family, ttrees)
    dev = build_examples(read_instances(dev_inst), vocab, family, dtrees)
    ckpt, tlog = train_one(seed, train, dev, tr, enc, vocab, catalog)
    save_checkpoint(out_ckpt, ckpt)
    write_rows(out_log, tlog.lines())
    return family, seed, tlog.best_f1


# ---------------------------------------------------------------- the pipeline

def run_pipeline(cfg: PipelineConfig) -> Dict[str, bool]:
    """Run every stage in order; returns ``{stage: ran}``."""
    work = Path(cfg.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    ran: Dict[str, bool] = {}
    use_const = "const" in cfg.families

    # prepare
    prep = work / "prepare"

    def prep_out():
        return [prep / f"{s}.{kind}" for s in SPLITS for kind in ("instances.tsv", "sentences.tsv", "report.txt")]

    def do_prepare():
        for split in SPLITS:
            sp = cfg.splits[split]
            corpus = load_corpus(sp.abstracts, sp.entities, sp.relations)
            instances, rows, report = prepare_corpus(corpus)
            write_instances(prep / f"{split}.instances.tsv", instances)
            write_sentences(prep / f"{split}.sentences.tsv", rows)
            write_rows(prep / f"{split}.report.txt", report.lines())
            if split == "train":
                (prep / "catalog.json").write_text(json.dumps(build_label_catalog(corpus).to_dict()))

    corpus_inputs = [q for sp in cfg.splits.values() for q in (sp.abstracts, sp.entities, sp.relations) if q]
    ran["prepare"] = run_stage("prepare", prep, corpus_inputs, {}, lambda: prep_out() + [prep / "catalog.json"],
                               do_prepare)

    # parse-import
    parse_dir = work / "parse-import"
    if use_const:
        for split in SPLITS:
            if cfg.splits[split].trees is None:
                raise StageError("parse-import", FileNotFoundError(
                    f"the const family is enabled but data.{split}.trees is not set"))

        def do_parse():
            for split in SPLITS:
                trees = read_trees(cfg.splits[split].trees)
                instances = read_instances(prep / f"{split}.instances.tsv")
                aligned, problems = check_tree_alignment(instances, trees)
                write_trees(parse_dir / f"{split}.trees", aligned)
                write_rows(parse_dir / f"{split}.mismatches.txt", problems)

        tree_inputs = [cfg.splits[s].trees for s in SPLITS] + [prep / f"{s}.instances.tsv" for s in SPLITS]
        ran["parse-import"] = run_stage(
            "parse-import", parse_dir, tree_inputs, {},
            lambda: [parse_dir / f"{s}.trees" for s in SPLITS], do_parse)

    # train
    train_dir = work / "train"
    models = [(fam, seed) for fam in cfg.families for seed in cfg.seeds]

    def ckpt_path(fam, seed):
        return train_dir / f"{fam}-seed{seed}.ckpt"

    def do_train():
        instances = read_instances(prep / "train.instances.tsv")
        vocab = build_vocab([i.marked_text for i in instances], min_freq=cfg.min_freq)
        catalog = LabelCatalog.from_dict(json.loads((prep / "catalog.json").read_text()))
        jobs = [(fam, seed, str(prep / "train.instances.tsv"), str(prep / "dev.instances.tsv"),
                 str(parse_dir / "train.trees"), str(parse_dir / "dev.trees"),
                 vocab.pieces, catalog.to_dict(), cfg.encoder.to_dict(), cfg.training.to_dict(),
                 str(ckpt_path(fam, seed)), str(train_dir / f"{fam}-seed{seed}.log"))
                for fam, seed in models]
        workers = max(1, int(os.environ.get(WORKERS_ENV, "1")))
        if workers == 1:
            results = [_train_job(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_train_job, jobs))
        write_rows(train_dir / "members.tsv",
                   [f"{fam}\t{seed}\t{ckpt_path(fam, seed).name}\t{f1:.10g}" for fam, seed, f1 in results])

    train_inputs = [prep / "train.instances.tsv", prep / "dev.instances.tsv", prep / "catalog.json"]
    if use_const:
        train_inputs += [parse_dir / "train.trees", parse_dir / "dev.trees"]
    settings = {"encoder": cfg.encoder.to_dict(), "training": cfg.training.to_dict(), "models": models,
                "min_freq": cfg.min_freq}
    ran["train"] = run_stage("train", train_dir, train_inputs, settings,
                             lambda: [ckpt_path(f, s) for f, s in models] + [train_dir / "members.tsv"],
                             do_train)

    # predict
    pred_dir = work / "predict"

    def do_predict():
        instances = read_instances(prep / "test.instances.tsv")
        trees = read_trees(parse_dir / "test.trees") if use_const else None
        for fam, seed in models:
            ckpt = load_checkpoint(ckpt_path(fam, seed))
            preds = predict(ckpt, instances, trees if fam == "const" else None)
            write_predictions(pred_dir / f"{fam}-seed{seed}.tsv", preds)

    pred_inputs = [prep / "test.instances.tsv"] + [ckpt_path(f, s) for f, s in models]
    if use_const:
        pred_inputs.append(parse_dir / "test.trees")
    ran["predict"] = run_stage("predict", pred_dir, pred_inputs, {},
                               lambda: [pred_dir / f"{f}-seed{s}.tsv" for f, s in models], do_predict)

    # vote
    vote_dir = work / "vote"

    def do_vote():
        instances = read_instances(prep / "test.instances.tsv")
        universe = [i.key for i in instances]
        rows = [l.split("\t") for l in (train_dir / "members.tsv").read_text().splitlines() if l]
        chosen: List[EnsembleMember] = []
        for fam in cfg.families:
            cands = [EnsembleMember(f, c, float(d), int(s)) for f, s, c, d in rows if f == fam]
            chosen += select_members(cands, cfg.selection).members
        member_preds = [read_predictions(pred_dir / f"{m.family}-seed{m.seed}.tsv", universe) for m in chosen]
        merged = majority_vote(member_preds, cfg.vote_mode) if member_preds else {}
        write_predictions(vote_dir / "ensemble.tsv", merged)
        write_rows(vote_dir / "members.tsv", [f"{m.family}\t{m.seed}\t{m.dev_f1:.10g}" for m in chosen])

    vote_inputs = [prep / "test.instances.tsv", train_dir / "members.tsv"] + \
                  [pred_dir / f"{f}-seed{s}.tsv" for f, s in models]
    ran["vote"] = run_stage("vote", vote_dir, vote_inputs,
                            {"selection": cfg.selection, "mode": cfg.vote_mode, "families": cfg.families},
                            lambda: [vote_dir / "ensemble.tsv"], do_vote)

    test_rel = cfg.splits["test"].relations
    if test_rel is None:
        return ran

    # evaluate
    eval_dir = work / "evaluate"
    counts_inputs = [cfg.train_counts] if cfg.train_counts else [prep / "catalog.json"]

    def train_counts():
        if cfg.train_counts:
            from .corpus import read_label_counts
            return read_label_counts(cfg.train_counts)
        cat = LabelCatalog.from_dict(json.loads((prep / "catalog.json").read_text()))
        return dict(zip(cat.labels, cat.counts))

    def gold_set():
        instances = read_instances(prep / "test.instances.tsv")
        return read_predictions(test_rel, [i.key for i in instances])

    def do_evaluate():
        counts = train_counts()
        report = evaluate(gold_set(), read_predictions(vote_dir / "ensemble.tsv"), sorted(counts), counts)
        (eval_dir / "report.txt").write_text(render_report(report, "text"))
        (eval_dir / "report.tsv").write_text(render_report(report, "tsv"))

    ran["evaluate"] = run_stage("evaluate", eval_dir,
                                [test_rel, vote_dir / "ensemble.tsv", prep / "test.instances.tsv"] + counts_inputs,
                                {}, lambda: [eval_dir / "report.txt", eval_dir / "report.tsv"], do_evaluate)

    # analyze
    an_dir = work / "analyze"

    def do_analyze():
        counts = train_counts()
        runs = [("ensemble", vote_dir / "ensemble.tsv")] + \
               [(f"{f}-seed{s}", pred_dir / f"{f}-seed{s}.tsv") for f, s in models]
        (an_dir / "analysis.txt").write_text(analyze(gold_set(), runs, counts))

    ran["analyze"] = run_stage("analyze", an_dir,
                               [test_rel, vote_dir / "ensemble.tsv", prep / "test.instances.tsv"] + counts_inputs
                               + [pred_dir / f"{f}-seed{s}.tsv" for f, s in models],
                               {}, lambda: [an_dir / "analysis.txt"], do_analyze)
    return ran


def analyze(gold, runs: Sequence[Tuple[str, Path]], train_counts: Dict[str, int],
            rare_labels: Optional[Sequence[str]] = None, rare_threshold: int = 50) -> str:
    """Per-run prediction counts and per-label F1 with the F1-vs-count fit.

    Rare labels default to those with fewer than ``rare_threshold``
    training examples.
    """
    labels = sorted(train_counts)
    if rare_labels is None:
        rare_labels = [l for l in labels if train_counts[l] < rare_threshold]
    lines = ["run\tlabel\ttrain_count\tf1\tpred_count\tfp"]
    fits = []
    for name, path in runs:
        pred = read_predictions(path, gold.keys()) if not isinstance(path, dict) else path
        report = evaluate(gold, pred, labels, train_counts)
        for l in labels:
            m = report.per_label[l]
            lines.append(f"{name}\t{l}\t{train_counts[l]}\t{m.f1:.4f}\t{m.pred_count}\t{m.fp}")
        if report.fit is not None:
            fits.append(f"{name}\tslope={report.fit[0]:.6g}\tintercept={report.fit[1]:.6g}")
        counts = count_predictions_by_label(pred, rare_labels)
        fits.append(f"{name}\trare predictions\t" + "\t".join(f"{l}={counts[l]}" for l in rare_labels))
    return "\n".join(lines + [""] + fits) + "\n"
