"""Toy const-encoder: subword transformer, constituent grouping, two constituent
attention layers, pooling and per-label sigmoid heads.

Everything is plain numpy in float64 with a hand-written backward pass.
Parameters live in an ordered ``dict`` of name -> array so the optimizer,
checkpointing and gradient checks can treat them uniformly.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .objective import weighted_bce_grad
from .syntax import ConstTree, ChunkSpan, extract_chunks
from .text import MARKERS, pre_split, strip_markers, unmarked_offsets
from .tokenization import SubwordVocab, tokenize

FAMILIES = ("plain", "const")
POOLINGS = ("mean", "cls")
LN_EPS = 1e-5
_NEG = -1e9

Params = Dict[str, np.ndarray]


class EncoderError(ValueError):
    pass


class AlignmentError(EncoderError):
    pass


@dataclass
class EncoderConfig:
    family: str = "const"
    d_model: int = 32
    n_heads: int = 2
    n_base_layers: int = 2
    n_const_layers: int = 2
    d_ff: int = 64
    max_len: int = 128
    dropout_p: float = 0.1
    pooling: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_const_layers != 2:
            raise ValueError("n_const_layers is fixed at 2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


# ---------------------------------------------------------------- instances

@dataclass
class EncodedInstance:
    ids: np.ndarray
    # unit index per subword: 0 for CLS, 1.. for constituents, -1 for SEP
    units: Optional[np.ndarray]
    n_units: int
    token_to_subword: List[Tuple[int, int]]


def token_units(marked_text: str, tree: ConstTree) -> Tuple[List[int], int, int]:
    """Constituent unit (1-based) of every pre-split token of ``marked_text``.

    The tree covers the unmarked sentence. Markers become units of their
    own; a chunk interrupted by a marker remains one unit. Returns
    ``(units, n_chunks, n_markers)``.
    """
    sentence = strip_markers(marked_text)
    sent_tokens = pre_split(sentence)
    leaves = tree.tokens()
    if [t[0] for t in sent_tokens] != leaves:
        raise AlignmentError(
            f"tree leaves {leaves} do not match sentence tokens {[t[0] for t in sent_tokens]}")
    chunks = extract_chunks(tree)
    leaf_chunk = [0] * len(leaves)
    for ci, c in enumerate(chunks):
        for i in range(c.token_start, c.token_end):
            leaf_chunk[i] = ci
    starts = [t[1] for t in sent_tokens]
    offs = unmarked_offsets(marked_text)
    keys: Dict[tuple, int] = {}
    out = []
    n_markers = 0
    for ti, (surface, s, _) in enumerate(pre_split(marked_text)):
        if surface in MARKERS:
            key = ("m", ti)
            n_markers += 1
        else:
            j = bisect.bisect_right(starts, offs[s]) - 1
            key = ("c", leaf_chunk[j])
        if key not in keys:
            keys[key] = len(keys) + 1
        out.append(keys[key])
    return out, len(chunks), n_markers


def encode_instance(marked_text: str, vocab: SubwordVocab, family: str,
                    tree: Optional[ConstTree] = None) -> EncodedInstance:
    tok = tokenize(marked_text, vocab)
    ids = np.asarray(tok.ids, dtype=np.int64)
    if family == "plain":
        return EncodedInstance(ids, None, 0, tok.token_to_subword)
    if tree is None:
        raise EncoderError("the const family needs a constituency tree per instance")
    per_token, n_chunks, n_markers = token_units(marked_text, tree)
    units = np.full(len(ids), -1, dtype=np.int64)
    units[0] = 0
    for (s, e), u in zip(tok.token_to_subword, per_token):
        units[s:e] = u
    n_units = 1 + max(per_token, default=0)
    # CLS + chunks + marker singletons; chunks of zero marked tokens cannot occur
    if n_units != 1 + n_chunks + n_markers:
        raise AlignmentError(f"constituent count {n_units} != 1 + {n_chunks} + {n_markers}")
    return EncodedInstance(ids, units, n_units, tok.token_to_subword)


@dataclass
class Batch:
    ids: np.ndarray                  # (B, S)
    mask: np.ndarray                 # (B, S) bool
    group: Optional[np.ndarray]      # (B, U, S) 0/1
    unit_mask: Optional[np.ndarray]  # (B, U) bool

    def __len__(self) -> int:
        return self.ids.shape[0]


def collate(instances: Sequence[EncodedInstance], pad_id: int = 0) -> Batch:
    if not instances:
        raise EncoderError("empty batch")
    B = len(instances)
    S = max(len(x.ids) for x in instances)
    ids = np.full((B, S), pad_id, dtype=np.int64)
    mask = np.zeros((B, S), dtype=bool)
    for b, x in enumerate(instances):
        ids[b, :len(x.ids)] = x.ids
        mask[b, :len(x.ids)] = True
    if instances[0].units is None:
        return Batch(ids, mask, None, None)
    U = max(x.n_units for x in instances)
    group = np.zeros((B, U, S))
    unit_mask = np.zeros((B, U), dtype=bool)
    for b, x in enumerate(instances):
        if x.units is None:
            raise EncoderError("mixed plain and const instances in one batch")
        pos = np.nonzero(x.units >= 0)[0]
        group[b, x.units[pos], pos] = 1.0
        unit_mask[b, :x.n_units] = True
    return Batch(ids, mask, group, unit_mask)


# ---------------------------------------------------------------- grouping ops

def sum_subwords_to_tokens(subword_vectors: np.ndarray,
                           token_to_subword: Sequence[Tuple[int, int]]) -> np.ndarray:
    """Token vector = sum of the vectors of its subwords."""
    out = np.zeros((len(token_to_subword),) + subword_vectors.shape[1:])
    for t, (s, e) in enumerate(token_to_subword):
        if e <= s:
            raise EncoderError(f"token {t} has an empty subword range")
        out[t] = subword_vectors[s:e].sum(axis=0)
    return out


def sum_tokens_to_constituents(token_vectors: np.ndarray, chunks: Sequence[ChunkSpan],
                               cls_vector: Optional[np.ndarray] = None) -> np.ndarray:
    """One summed vector per chunk; ``cls_vector``, when given, leads the sequence."""
    T = token_vectors.shape[0]
    rows = [] if cls_vector is None else [np.asarray(cls_vector, dtype=float)]
    for c in chunks:
        if not (0 <= c.token_start < c.token_end <= T):
            raise EncoderError(f"chunk {c} out of bounds for {T} tokens")
        rows.append(token_vectors[c.token_start:c.token_end].sum(axis=0))
    return np.stack(rows) if rows else np.zeros((0,) + token_vectors.shape[1:])


# ---------------------------------------------------------------- parameters

def _block_shapes(prefix: str, d: int, f: int):
    return [
        (f"{prefix}.attn.wq", (d, d)), (f"{prefix}.attn.bq", (d,)),
        (f"{prefix}.attn.wk", (d, d)), (f"{prefix}.attn.bk", (d,)),
        (f"{prefix}.attn.wv", (d, d)), (f"{prefix}.attn.bv", (d,)),
        (f"{prefix}.attn.wo", (d, d)), (f"{prefix}.attn.bo", (d,)),
        (f"{prefix}.ln1.g", (d,)), (f"{prefix}.ln1.b", (d,)),
        (f"{prefix}.ff.w1", (d, f)), (f"{prefix}.ff.b1", (f,)),
        (f"{prefix}.ff.w2", (f, d)), (f"{prefix}.ff.b2", (d,)),
        (f"{prefix}.ln2.g", (d,)), (f"{prefix}.ln2.b", (d,)),
    ]


def param_shapes(config: EncoderConfig, vocab_size: int, n_labels: int):
    d, f = config.d_model, config.d_ff
    shapes = [("emb.tok", (vocab_size, d)), ("emb.pos", (config.max_len, d)),
              ("emb.ln.g", (d,)), ("emb.ln.b", (d,))]
    for i in range(config.n_base_layers):
        shapes += _block_shapes(f"base.{i}", d, f)
    if config.family == "const":
        shapes += [("const.pos", (config.max_len, d)), ("const.ln.g", (d,)), ("const.ln.b", (d,))]
        for i in range(config.n_const_layers):
            shapes += _block_shapes(f"const.{i}", d, f)
    shapes += [("head.w", (d, n_labels)), ("head.b", (n_labels,))]
    return shapes


def init_params(config: EncoderConfig, vocab_size: int, n_labels: int,
                seed: Optional[int] = None) -> Params:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params: Params = {}
    for name, shape in param_shapes(config, vocab_size, n_labels):
        leaf = name.rsplit(".", 1)[1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        elif name in ("emb.tok", "emb.pos", "const.pos"):
            params[name] = rng.normal(0.0, 1.0, shape)
        else:
            params[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    return params


def passthrough_const_layers(params: Params) -> Params:
    """Copy of ``params`` whose constituent blocks only re-normalise their input."""
    out = {k: v.copy() for k, v in params.items()}
    for k in out:
        if k.startswith("const.") and k.split(".")[-1] in ("wo", "bo", "w2", "b2"):
            out[k][...] = 0.0
        if k == "const.pos":
            out[k][...] = 0.0
    return out


# ---------------------------------------------------------------- layers

def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_back(dy, cache, g):
    xhat, inv = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    dxh = dy * g
    dx = inv * (dxh - dxh.mean(-1, keepdims=True) - xhat * (dxh * xhat).mean(-1, keepdims=True))
    return dx, dg, db


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _dropout(x, p, rng):
    if rng is None or p == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep, keep


def _wgrad(x, dy):
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _bgrad(dy):
    return dy.reshape(-1, dy.shape[-1]).sum(0)


def _block_forward(P, pre, x, bias, n_heads, p_drop, rng):
    B, T, d = x.shape
    dh = d // n_heads

    def heads(z):
        return z.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    q = heads(x @ P[pre + ".attn.wq"] + P[pre + ".attn.bq"])
    k = heads(x @ P[pre + ".attn.wk"] + P[pre + ".attn.bk"])
    v = heads(x @ P[pre + ".attn.wv"] + P[pre + ".attn.bv"])
    s = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh) + bias
    s = s - s.max(-1, keepdims=True)
    pr = np.exp(s)
    pr /= pr.sum(-1, keepdims=True)
    pd, m_attn = _dropout(pr, p_drop, rng)
    ctx = (pd @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    a = ctx @ P[pre + ".attn.wo"] + P[pre + ".attn.bo"]
    a, m_a = _dropout(a, p_drop, rng)
    y1, ln1 = _layernorm(x + a, P[pre + ".ln1.g"], P[pre + ".ln1.b"])
    f_pre = y1 @ P[pre + ".ff.w1"] + P[pre + ".ff.b1"]
    f_act, t = _gelu(f_pre)
    f = f_act @ P[pre + ".ff.w2"] + P[pre + ".ff.b2"]
    f, m_f = _dropout(f, p_drop, rng)
    y2, ln2 = _layernorm(y1 + f, P[pre + ".ln2.g"], P[pre + ".ln2.b"])
    cache = (x, q, k, v, pr, pd, m_attn, ctx, m_a, ln1, y1, f_pre, f_act, t, m_f, ln2)
    return y2, cache


def _block_backward(P, pre, dy, cache, n_heads, G):
    x, q, k, v, pr, pd, m_attn, ctx, m_a, ln1, y1, f_pre, f_act, t, m_f, ln2 = cache
    B, T, d = x.shape
    dh = d // n_heads

    dr2, G[pre + ".ln2.g"], G[pre + ".ln2.b"] = _layernorm_back(dy, ln2, P[pre + ".ln2.g"])
    df = dr2 if m_f is None else dr2 * m_f
    G[pre + ".ff.w2"] = _wgrad(f_act, df)
    G[pre + ".ff.b2"] = _bgrad(df)
    df_pre = _gelu_back(df @ P[pre + ".ff.w2"].T, f_pre, t)
    G[pre + ".ff.w1"] = _wgrad(y1, df_pre)
    G[pre + ".ff.b1"] = _bgrad(df_pre)
    dy1 = dr2 + df_pre @ P[pre + ".ff.w1"].T

    dr1, G[pre + ".ln1.g"], G[pre + ".ln1.b"] = _layernorm_back(dy1, ln1, P[pre + ".ln1.g"])
    da = dr1 if m_a is None else dr1 * m_a
    G[pre + ".attn.wo"] = _wgrad(ctx, da)
    G[pre + ".attn.bo"] = _bgrad(da)
    dctx = (da @ P[pre + ".attn.wo"].T).reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    dpd = dctx @ v.transpose(0, 1, 3, 2)
    dv = pd.transpose(0, 1, 3, 2) @ dctx
    dp = dpd if m_attn is None else dpd * m_attn
    ds = pr * (dp - (dp * pr).sum(-1, keepdims=True)) / math.sqrt(dh)
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q

    dx = dr1
    for name, dz in (("q", dq), ("k", dk), ("v", dv)):
        dz = dz.transpose(0, 2, 1, 3).reshape(B, T, d)
        G[f"{pre}.attn.w{name}"] = _wgrad(x, dz)
        G[f"{pre}.attn.b{name}"] = _bgrad(dz)
        dx = dx + dz @ P[f"{pre}.attn.w{name}"].T
    return dx


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------- forward / backward

def forward(params: Params, config: EncoderConfig, batch: Batch, train: bool = False,
            rng: Optional[np.random.Generator] = None):
    """Label probabilities ``(B, K)`` and the cache needed by :func:`backward`.

    Dropout is applied only when ``train`` is true, with masks drawn from
    ``rng``; inference is deterministic.
    """
    B, S = batch.ids.shape
    if S > config.max_len:
        raise EncoderError(f"subword sequence of length {S} exceeds max_len={config.max_len}")
    const = config.family == "const"
    if const and batch.group is None:
        raise EncoderError("const family needs chunk-aligned instances")
    if not const and batch.group is not None:
        raise EncoderError("plain family got chunk-aligned instances")
    drop_rng = rng if train else None
    p = config.dropout_p
    cache: dict = {"ids": batch.ids, "S": S}

    x = params["emb.tok"][batch.ids] + params["emb.pos"][:S]
    x, cache["emb.ln"] = _layernorm(x, params["emb.ln.g"], params["emb.ln.b"])
    x, cache["emb.drop"] = _dropout(x, p, drop_rng)
    bias = np.where(batch.mask, 0.0, _NEG)[:, None, None, :]
    base = []
    for i in range(config.n_base_layers):
        x, c = _block_forward(params, f"base.{i}", x, bias, config.n_heads, p, drop_rng)
        base.append(c)
    cache["base"] = base

    if const:
        U = batch.group.shape[1]
        if U > config.max_len:
            raise EncoderError(f"constituent sequence of length {U} exceeds max_len={config.max_len}")
        h = np.einsum("bus,bsd->bud", batch.group, x) + params["const.pos"][:U]
        h, cache["const.ln"] = _layernorm(h, params["const.ln.g"], params["const.ln.b"])
        h, cache["const.drop"] = _dropout(h, p, drop_rng)
        ubias = np.where(batch.unit_mask, 0.0, _NEG)[:, None, None, :]
        layers = []
        for i in range(config.n_const_layers):
            h, c = _block_forward(params, f"const.{i}", h, ubias, config.n_heads, p, drop_rng)
            layers.append(c)
        cache["const"] = layers
        cache["group"] = batch.group
        mask = batch.unit_mask
    else:
        h, mask = x, batch.mask

    cache["pool_mask"] = mask
    cache["pool_shape"] = h.shape
    if config.pooling == "mean":
        w = mask / mask.sum(1, keepdims=True)
        pooled = np.einsum("bt,btd->bd", w, h)
        cache["pool_w"] = w
    else:
        pooled = h[:, 0]
    pooled, cache["pool.drop"] = _dropout(pooled, p, drop_rng)
    cache["pooled"] = pooled
    z = pooled @ params["head.w"] + params["head.b"]
    probs = _sigmoid(z)
    cache["probs"] = probs
    return probs, cache


def backward(params: Params, config: EncoderConfig, cache: dict, labels: np.ndarray,
             class_weights: np.ndarray) -> Params:
    """Exact gradients of the mean weighted BCE for the recorded forward pass."""
    probs = cache["probs"]
    dprobs = weighted_bce_grad(probs, labels, class_weights)
    dz = dprobs * probs * (1.0 - probs)
    G: Params = {}
    G["head.w"] = cache["pooled"].T @ dz
    G["head.b"] = dz.sum(0)
    dpooled = dz @ params["head.w"].T
    if cache["pool.drop"] is not None:
        dpooled = dpooled * cache["pool.drop"]
    if config.pooling == "mean":
        dh = cache["pool_w"][:, :, None] * dpooled[:, None, :]
    else:
        dh = np.zeros(cache["pool_shape"])
        dh[:, 0] = dpooled

    if config.family == "const":
        for i in reversed(range(config.n_const_layers)):
            dh = _block_backward(params, f"const.{i}", dh, cache["const"][i], config.n_heads, G)
        if cache["const.drop"] is not None:
            dh = dh * cache["const.drop"]
        dh, G["const.ln.g"], G["const.ln.b"] = _layernorm_back(dh, cache["const.ln"], params["const.ln.g"])
        U = dh.shape[1]
        G["const.pos"] = np.zeros_like(params["const.pos"])
        G["const.pos"][:U] = dh.sum(0)
        dx = np.einsum("bus,bud->bsd", cache["group"], dh)
    else:
        dx = dh

    for i in reversed(range(config.n_base_layers)):
        dx = _block_backward(params, f"base.{i}", dx, cache["base"][i], config.n_heads, G)
    if cache["emb.drop"] is not None:
        dx = dx * cache["emb.drop"]
    dx, G["emb.ln.g"], G["emb.ln.b"] = _layernorm_back(dx, cache["emb.ln"], params["emb.ln.g"])
    S = cache["S"]
    G["emb.pos"] = np.zeros_like(params["emb.pos"])
    G["emb.pos"][:S] = dx.sum(0)
    G["emb.tok"] = np.zeros_like(params["emb.tok"])
    np.add.at(G["emb.tok"], cache["ids"].reshape(-1), dx.reshape(-1, dx.shape[-1]))

    out = {name: G[name] for name in params}
    for name, g in out.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    return out


def predict_proba(params: Params, config: EncoderConfig, instances: Sequence[EncodedInstance],
                  batch_size: int = 64, pad_id: int = 0) -> np.ndarray:
    if not instances:
        return np.zeros((0, params["head.b"].shape[0]))
    out = []
    for i in range(0, len(instances), batch_size):
        probs, _ = forward(params, config, collate(instances[i:i + batch_size], pad_id))
        out.append(probs)
    return np.concatenate(out)
