"""Tiny models and datasets shared by the encoder, training and acceptance tests."""

from __future__ import annotations

from constre.encoder import EncoderConfig
from constre.pipeline import build_examples, catalog_from_instances
from constre.syntax import parse_bracketed
from constre.synthetic import make_instances
from constre.tokenization import build_vocab


def toy_data(n=20, seed=0, negatives=4, family="const", min_freq=1):
    pairs = make_instances(n, seed=seed, negatives=negatives)
    instances = [p[0] for p in pairs]
    trees = [parse_bracketed(p[1]) for p in pairs]
    vocab = build_vocab([i.marked_text for i in instances], min_freq=min_freq)
    catalog = catalog_from_instances(instances)
    examples = build_examples(instances, vocab, family, trees if family == "const" else None)
    return instances, trees, vocab, catalog, examples


def small_config(family="const", d_model=8, dropout_p=0.1, **kw):
    return EncoderConfig(family=family, d_model=d_model, n_heads=2, d_ff=2 * d_model,
                         dropout_p=dropout_p, **kw)


def write_pipeline_inputs(root, n_train=30, n_dev=10, n_test=10, seed=0, label_probs=None, cues=None,
                          with_trees=True):
    """Synthetic train/dev/test TSVs (and trees) under ``root``; returns the data keys."""
    from constre.synthetic import make_corpus, write_split
    keys = {}
    for i, (split, n) in enumerate((("train", n_train), ("dev", n_dev), ("test", n_test))):
        corpus, trees = make_corpus(n, seed=seed * 10 + i, cues=cues, label_probs=label_probs,
                                    prefix=f"{split[:2].upper()}")
        paths = write_split(root, split, corpus, trees)
        for kind, path in paths.items():
            if kind == "trees" and not with_trees:
                continue
            keys[f"data.{split}.{kind}"] = path.name
    return keys


def write_pipeline_config(root, work="work", families="plain,const", seeds="0,1,2", selection="top_k:2",
                          vote_mode="plurality", epochs=5, extra=None, **data_kw):
    from pathlib import Path
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    kv = write_pipeline_inputs(root, **data_kw)
    kv.update({
        "work_dir": work, "families": families, "seeds": seeds, "selection": selection,
        "vote_mode": vote_mode, "vocab.min_freq": "1",
        "encoder.d_model": "16", "encoder.n_heads": "2", "encoder.d_ff": "32",
        "training.learning_rate": "1e-3", "training.max_epochs": str(epochs), "training.patience": "3",
    })
    kv.update(extra or {})
    cfg = root / "pipe.cfg"
    cfg.write_text("# synthetic pipeline\n" + "".join(f"{k} = {v}\n" for k, v in kv.items()))
    return cfg
