"""Command-line entry point: ``constre <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import CorpusError, load_corpus, read_label_counts, write_rows
from .ensemble import VOTE_MODES, majority_vote, read_predictions, union_universe, write_predictions
from .evaluate import evaluate, render_report
from .pipeline import (PipelineConfig, StageError, analyze, build_examples, catalog_from_instances,
                       check_tree_alignment, configs_from_kv, predict, read_kv, run_pipeline)
from .preprocess import prepare_corpus, read_instances, write_instances, write_sentences
from .syntax import TreeParseError, read_trees, write_trees
from .tokenization import build_vocab
from .training import train_one

log = logging.getLogger("constre")


def cmd_prepare(args) -> int:
    corpus = load_corpus(args.abstracts, args.entities, args.relations)
    instances, rows, report = prepare_corpus(corpus)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_instances(out, instances)
    if args.sentences:
        write_sentences(args.sentences, rows)
    for line in report.lines():
        print(line, file=sys.stderr)
    return 0


def cmd_parse_import(args) -> int:
    instances = read_instances(args.instances)
    trees = read_trees(args.trees)
    aligned, problems = check_tree_alignment(instances, trees)
    for p in problems:
        print(f"mismatch\t{p}", file=sys.stderr)
    if args.out:
        write_trees(args.out, aligned)
    if problems and not args.allow_mismatch:
        print(f"{len(problems)} tree/sentence mismatches", file=sys.stderr)
        return 1
    return 0


def cmd_train(args) -> int:
    kv = read_kv(args.config) if args.config else {}
    enc, tr = configs_from_kv(kv)
    if args.family:
        enc.family = args.family
    train_inst = read_instances(args.train)
    dev_inst = read_instances(args.dev)
    vocab = build_vocab([i.marked_text for i in train_inst], min_freq=int(kv.get("vocab.min_freq", "2")))
    if args.train_relations:
        from .corpus import build_label_catalog
        catalog = build_label_catalog(load_corpus(args.train_abstracts, args.train_entities, args.train_relations))
    else:
        catalog = catalog_from_instances(train_inst)
    ttrees = read_trees(args.train_trees) if args.train_trees else None
    dtrees = read_trees(args.dev_trees) if args.dev_trees else None
    train = build_examples(train_inst, vocab, enc.family, ttrees)
    dev = build_examples(dev_inst, vocab, enc.family, dtrees)
    seed = args.seed if args.seed is not None else tr.seed
    ckpt, tlog = train_one(seed, train, dev, tr, enc, vocab, catalog)
    save_checkpoint(args.out, ckpt)
    lines = tlog.lines()
    if args.log:
        write_rows(args.log, lines)
    else:
        print("\n".join(lines))
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    instances = read_instances(args.instances)
    trees = read_trees(args.trees) if args.trees else None
    labels = args.labels.split(",") if args.labels else None
    write_predictions(args.out, predict(ckpt, instances, trees, labels))
    return 0


def cmd_vote(args) -> int:
    universe = [i.key for i in read_instances(args.instances)] if args.instances else None
    members = [read_predictions(p, universe) for p in args.predictions]
    if universe is None:
        keys = union_universe(members)
        members = [{k: p.get(k, frozenset()) for k in keys} for p in members]
    write_predictions(args.out, majority_vote(members, args.mode))
    return 0


def cmd_evaluate(args) -> int:
    universe = [i.key for i in read_instances(args.instances)] if args.instances else None
    gold = read_predictions(args.gold, universe)
    pred = read_predictions(args.pred, universe)
    counts = read_label_counts(args.train_counts) if args.train_counts else None
    labels = sorted(counts) if counts else None
    text = render_report(evaluate(gold, pred, labels, counts), args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    gold = read_predictions(args.gold)
    counts = read_label_counts(args.train_counts)
    runs = []
    for spec in args.pred:
        name, _, path = spec.rpartition("=")
        runs.append((name or Path(path).stem, Path(path)))
    rare = args.labels.split(",") if args.labels else None
    text = analyze(gold, runs, counts, rare)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_pipeline(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    if args.mode:
        cfg.vote_mode = args.mode
    ran = run_pipeline(cfg)
    for stage, did in ran.items():
        print(f"{stage}\t{'ran' if did else 'skipped'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="constre", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="corpus TSVs -> marked candidate instances")
    p.add_argument("--abstracts", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--relations")
    p.add_argument("--out", required=True, help="instances TSV")
    p.add_argument("--sentences", help="also write the sentences to parse")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("parse-import", help="check a trees file against the instance sentences")
    p.add_argument("--instances", required=True)
    p.add_argument("--trees", required=True)
    p.add_argument("--out")
    p.add_argument("--allow-mismatch", action="store_true")
    p.set_defaults(func=cmd_parse_import)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--family", choices=("plain", "const"))
    p.add_argument("--train", required=True, help="train instances TSV")
    p.add_argument("--dev", required=True, help="dev instances TSV")
    p.add_argument("--train-trees")
    p.add_argument("--dev-trees")
    p.add_argument("--train-abstracts")
    p.add_argument("--train-entities")
    p.add_argument("--train-relations", help="build the label catalog from the corpus")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="TrainLog output (default stdout)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label instances with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--instances", required=True)
    p.add_argument("--trees")
    p.add_argument("--labels", help="comma-separated labels the checkpoint must use")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("vote", help="merge prediction files by voting")
    p.add_argument("predictions", nargs="+")
    p.add_argument("--mode", choices=VOTE_MODES, default="majority")
    p.add_argument("--instances", help="instance universe (default: union of keys)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("evaluate", help="score predictions against gold relations")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--train-counts")
    p.add_argument("--instances")
    p.add_argument("--format", choices=("text", "tsv"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="per-label F1 vs train count and rare-label prediction counts")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True, action="append", help="[name=]path, repeatable")
    p.add_argument("--train-counts", required=True)
    p.add_argument("--labels", help="comma-separated rare labels")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pipeline", help="run every stage from one config")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=VOTE_MODES)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, TreeParseError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
