import numpy as np
import pytest

from constre.checkpoint import MAGIC, Checkpoint, CheckpointError, dumps, load_checkpoint, loads, save_checkpoint
from constre.corpus import LabelCatalog
from constre.encoder import init_params
from constre.tokenization import build_vocab

from toy import small_config


@pytest.fixture(params=["plain", "const"])
def ckpt(request):
    vocab = build_vocab(["@@Aspirin@@ inhibits $$COX2$$ ¢¢x¢¢"], min_freq=1)
    cat = LabelCatalog(("ACTIVATOR", "INHIBITOR"), (3, 4))
    cfg = small_config(request.param)
    params = init_params(cfg, len(vocab), len(cat), seed=2)
    return Checkpoint(cfg, vocab, cat, params, {"seed": 2, "dev_f1": 0.5})


def test_bit_exact_round_trip(tmp_path, ckpt):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, ckpt)
    back = load_checkpoint(p)
    assert p.read_bytes().startswith(MAGIC)
    assert back.config == ckpt.config and back.vocab.pieces == ckpt.vocab.pieces
    assert back.catalog == ckpt.catalog and back.meta == ckpt.meta
    for k, v in ckpt.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    assert dumps(back) == p.read_bytes()


def test_bad_magic(ckpt):
    with pytest.raises(CheckpointError, match="magic"):
        loads(b"XX" + dumps(ckpt))


def test_truncated(ckpt):
    with pytest.raises(CheckpointError):
        loads(dumps(ckpt)[:-8])


def test_shape_mismatch(ckpt):
    ckpt.params["head.b"] = np.zeros(5)
    with pytest.raises(CheckpointError, match="shapes"):
        loads(dumps(ckpt))
