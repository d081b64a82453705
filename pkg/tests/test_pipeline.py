import pytest

from constre.checkpoint import Checkpoint, load_checkpoint
from constre.cli import main
from constre.encoder import init_params
from constre.pipeline import (PipelineConfig, StageError, check_tree_alignment, predict, read_kv,
                              run_pipeline)
from constre.preprocess import read_instances, write_instances
from constre.syntax import parse_bracketed
from constre.training import TrainConfig, train_one

from toy import small_config, toy_data, write_pipeline_config


def test_read_kv(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# c\na = 1\n\nb.c=x = y\n")
    assert read_kv(p) == {"a": "1", "b.c": "x = y"}
    p.write_text("nonsense\n")
    with pytest.raises(ValueError, match=":1:"):
        read_kv(p)


def test_config_resolves_paths_and_rejects_unknown(tmp_path):
    cfg_path = write_pipeline_config(tmp_path, n_train=4, n_dev=2, n_test=2)
    cfg = PipelineConfig.from_file(cfg_path)
    assert cfg.work_dir == tmp_path / "work"
    assert cfg.splits["train"].abstracts.exists()
    assert cfg.encoder.d_model == 16 and cfg.training.learning_rate == 1e-3
    cfg_path.write_text(cfg_path.read_text() + "encoder.width = 3\n")
    with pytest.raises(ValueError, match="width"):
        PipelineConfig.from_file(cfg_path)


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg_path = write_pipeline_config(root, epochs=3, seeds="0,1")
    first = run_pipeline(PipelineConfig.from_file(cfg_path))
    return root, cfg_path, first


def test_all_stages_ran_and_artifacts(pipeline_run):
    root, _, first = pipeline_run
    assert first == {s: True for s in ("prepare", "parse-import", "train", "predict", "vote", "evaluate", "analyze")}
    work = root / "work"
    for rel in ("prepare/train.instances.tsv", "parse-import/test.trees", "train/const-seed1.ckpt",
                "train/plain-seed0.log", "predict/const-seed0.tsv", "vote/ensemble.tsv",
                "evaluate/report.txt", "evaluate/report.tsv", "analyze/analysis.txt"):
        assert (work / rel).exists(), rel
    lines = (work / "train" / "plain-seed0.log").read_text().splitlines()
    assert len(lines[0].split("\t")) == 3
    assert len((work / "vote" / "members.tsv").read_text().splitlines()) == 4


def test_rerun_skips_everything(pipeline_run):
    root, cfg_path, _ = pipeline_run
    before = (root / "work" / "evaluate" / "report.txt").read_bytes()
    again = run_pipeline(PipelineConfig.from_file(cfg_path))
    assert not any(again.values())
    assert (root / "work" / "evaluate" / "report.txt").read_bytes() == before


def test_changed_vote_mode_reruns_vote_only(pipeline_run):
    root, cfg_path, _ = pipeline_run
    cfg = PipelineConfig.from_file(cfg_path)
    cfg.vote_mode = "majority"
    ran = run_pipeline(cfg)
    assert ran["vote"]
    assert not any(ran[s] for s in ("prepare", "parse-import", "train", "predict"))
    cfg.vote_mode = "plurality"
    run_pipeline(cfg)


def test_missing_trees_halts_at_parse_import(tmp_path):
    cfg_path = write_pipeline_config(tmp_path, n_train=4, n_dev=2, n_test=2, with_trees=False)
    with pytest.raises(StageError) as exc:
        run_pipeline(PipelineConfig.from_file(cfg_path))
    assert exc.value.stage == "parse-import" and "trees" in str(exc.value)
    assert main(["pipeline", "--config", str(cfg_path)]) == 2


def test_plain_only_needs_no_trees(tmp_path):
    cfg_path = write_pipeline_config(tmp_path, families="plain", seeds="0", selection="drop_worst",
                                     n_train=6, n_dev=3, n_test=3, epochs=1, with_trees=False)
    ran = run_pipeline(PipelineConfig.from_file(cfg_path))
    assert "parse-import" not in ran and ran["vote"]


def test_tree_mismatch_replaced_by_flat():
    insts, trees, *_ = toy_data(3, negatives=0, family="plain")
    bad = list(trees)
    bad[1] = parse_bracketed("(S (NN wrong))")
    aligned, problems = check_tree_alignment(insts, bad)
    assert len(problems) == 1 and problems[0].startswith("S2\t0\t")
    assert aligned[0] == trees[0]
    assert {n.label for n in aligned[1].subtrees()} == {"S", "X"}


class TestPredict:
    def test_memorize_five(self):
        insts, trees, vocab, catalog, examples = toy_data(5, negatives=1, family="const")
        cfg = TrainConfig(learning_rate=3e-3, max_epochs=300, patience=300)
        ckpt, log = train_one(0, examples, examples, cfg, small_config("const", d_model=16, dropout_p=0.0),
                              vocab, catalog)
        preds = predict(ckpt, insts, trees)
        assert preds == {i.key: i.gold_labels for i in insts}

    def test_zero_head_predicts_everything(self):
        insts, _, vocab, catalog, examples = toy_data(4, negatives=1, family="plain")
        cfg = small_config("plain")
        params = init_params(cfg, len(vocab), len(catalog))
        params["head.w"][...] = 0.0
        params["head.b"][...] = 0.0
        preds = predict(Checkpoint(cfg, vocab, catalog, params), insts)
        assert all(s == set(catalog.labels) for s in preds.values())

    def test_empty_instances(self, tmp_path):
        _, _, vocab, catalog, _ = toy_data(4, negatives=1, family="plain")
        cfg = small_config("plain")
        ckpt = Checkpoint(cfg, vocab, catalog, init_params(cfg, len(vocab), len(catalog)))
        assert predict(ckpt, []) == {}

    def test_catalog_mismatch(self):
        insts, _, vocab, catalog, _ = toy_data(4, negatives=1, family="plain")
        cfg = small_config("plain")
        ckpt = Checkpoint(cfg, vocab, catalog, init_params(cfg, len(vocab), len(catalog)))
        with pytest.raises(ValueError, match="catalog"):
            predict(ckpt, insts, labels=["OTHER"])


class TestCLI:
    def test_stagewise_commands(self, tmp_path, pipeline_run):
        root, _, _ = pipeline_run
        prep = tmp_path / "train.inst.tsv"
        assert main(["prepare", "--abstracts", str(root / "train_abstracts.tsv"),
                     "--entities", str(root / "train_entities.tsv"),
                     "--relations", str(root / "train_relations.tsv"),
                     "--out", str(prep), "--sentences", str(tmp_path / "s.tsv")]) == 0
        assert read_instances(prep) == read_instances(root / "work" / "prepare" / "train.instances.tsv")
        assert main(["parse-import", "--instances", str(prep), "--trees", str(root / "train.trees"),
                     "--out", str(tmp_path / "t.trees")]) == 0
        cfgf = tmp_path / "train.cfg"
        cfgf.write_text("encoder.d_model = 8\ntraining.learning_rate = 1e-3\ntraining.max_epochs = 1\n"
                        "vocab.min_freq = 1\n")
        ckpt = tmp_path / "m.ckpt"
        assert main(["train", "--config", str(cfgf), "--seed", "3", "--family", "const",
                     "--train", str(prep), "--dev", str(prep), "--train-trees", str(tmp_path / "t.trees"),
                     "--dev-trees", str(tmp_path / "t.trees"), "--out", str(ckpt),
                     "--log", str(tmp_path / "log.tsv")]) == 0
        assert load_checkpoint(ckpt).meta["seed"] == 3
        out = tmp_path / "p.tsv"
        assert main(["predict", "--checkpoint", str(ckpt), "--instances", str(prep),
                     "--trees", str(tmp_path / "t.trees"), "--out", str(out)]) == 0
        assert main(["vote", str(out), str(out), "--mode", "majority", "--instances", str(prep),
                     "--out", str(tmp_path / "v.tsv")]) == 0
        assert (tmp_path / "v.tsv").read_text() == out.read_text()
        assert main(["evaluate", "--gold", str(root / "train_relations.tsv"), "--pred", str(out),
                     "--format", "tsv", "--out", str(tmp_path / "r.tsv")]) == 0
        assert (tmp_path / "r.tsv").read_text().startswith("label\tprecision")
        counts = tmp_path / "counts.tsv"
        counts.write_text("ACTIVATOR\t20\nINHIBITOR\t3\n")
        assert main(["analyze", "--gold", str(root / "train_relations.tsv"), "--pred", f"one={out}",
                     "--train-counts", str(counts), "--labels", "INHIBITOR", "--out", str(tmp_path / "a.txt")]) == 0
        rare = [l for l in (tmp_path / "a.txt").read_text().splitlines() if "rare predictions" in l]
        assert len(rare) == 1 and rare[0].startswith("one\trare predictions\tINHIBITOR=")
        assert "ACTIVATOR" not in rare[0]

    def test_parse_import_mismatch_exit(self, tmp_path, pipeline_run):
        root, _, _ = pipeline_run
        inst = root / "work" / "prepare" / "dev.instances.tsv"
        trees = (root / "dev.trees").read_text().splitlines()
        data = [l for l in trees if not l.startswith("#")]
        data[0] = "(S (NN nope))"
        bad = tmp_path / "bad.trees"
        bad.write_text("\n".join(data) + "\n")
        assert main(["parse-import", "--instances", str(inst), "--trees", str(bad)]) == 1
        assert main(["parse-import", "--instances", str(inst), "--trees", str(bad), "--allow-mismatch"]) == 0

    def test_bad_input_exit_code(self, tmp_path, capsys):
        a = tmp_path / "a.tsv"
        a.write_text("only-one-column\n")
        e = tmp_path / "e.tsv"
        e.write_text("")
        assert main(["prepare", "--abstracts", str(a), "--entities", str(e), "--out", str(tmp_path / "o")]) == 2
        assert "error" in capsys.readouterr().err

    def test_empty_instances_predict(self, tmp_path):
        _, _, vocab, catalog, _ = toy_data(4, negatives=1, family="plain")
        cfg = small_config("plain")
        from constre.checkpoint import save_checkpoint
        ck = tmp_path / "m.ckpt"
        save_checkpoint(ck, Checkpoint(cfg, vocab, catalog, init_params(cfg, len(vocab), len(catalog))))
        empty = tmp_path / "empty.tsv"
        write_instances(empty, [])
        out = tmp_path / "p.tsv"
        assert main(["predict", "--checkpoint", str(ck), "--instances", str(empty), "--out", str(out)]) == 0
        assert out.read_text() == ""
