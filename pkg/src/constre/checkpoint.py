"""Self-describing binary checkpoint: magic line, JSON header, raw float64 tensors."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .corpus import LabelCatalog
from .encoder import EncoderConfig, Params, param_shapes
from .tokenization import SubwordVocab

MAGIC = b"CONSTRE-CKPT v1\n"
_DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: EncoderConfig
    vocab: SubwordVocab
    catalog: LabelCatalog
    params: Params
    meta: Dict = field(default_factory=dict)


def dumps(ckpt: Checkpoint) -> bytes:
    tensors, blobs, offset = [], [], 0
    for name, arr in ckpt.params.items():
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": _DTYPE,
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.pieces,
        "catalog": ckpt.catalog.to_dict(),
        "meta": ckpt.meta,
        "tensors": tensors,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blobs)


def loads(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a constre checkpoint (bad magic)")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    body = pos + hlen
    config = EncoderConfig.from_dict(header["config"])
    vocab = SubwordVocab(header["vocab"])
    catalog = LabelCatalog.from_dict(header["catalog"])
    params: Params = {}
    for t in header["tensors"]:
        start = body + t["offset"]
        buf = data[start:start + t["nbytes"]]
        if len(buf) != t["nbytes"]:
            raise CheckpointError(f"truncated tensor {t['name']}")
        params[t["name"]] = np.frombuffer(buf, dtype=t["dtype"]).reshape(t["shape"]).copy()
    expected = dict(param_shapes(config, len(vocab), len(catalog)))
    got = {k: tuple(v.shape) for k, v in params.items()}
    if got != {k: tuple(v) for k, v in expected.items()}:
        raise CheckpointError("tensor shapes do not match the stored config")
    return Checkpoint(config, vocab, catalog, params, header["meta"])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
