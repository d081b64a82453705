"""Adam training loop with dev-F1 early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np

from .checkpoint import Checkpoint
from .corpus import LabelCatalog
from .encoder import (EncodedInstance, EncoderConfig, Params, backward, collate, forward,
                      init_params, predict_proba)
from .evaluate import micro_prf
from .objective import compute_class_weights, encode_labels, weighted_bce
from .tokenization import SubwordVocab

log = logging.getLogger(__name__)

THRESHOLD = 0.5

__all__ = [
    "AdamState", "Example", "TrainConfig", "TrainLog", "adam_step", "compute_class_weights",
    "decide_labels", "train_one", "weighted_bce",
]


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 10
    patience: int = 3
    eval_every: int = 0  # steps; 0 means once per epoch
    clip_norm: float = 0.0  # global-norm clipping, 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Example:
    encoded: EncodedInstance
    labels: FrozenSet[str]


@dataclass
class EvalRecord:
    step: int
    epoch: int
    loss: float
    dev_f1: float


@dataclass
class TrainLog:
    records: List[EvalRecord] = field(default_factory=list)
    best_step: int = -1
    best_f1: float = 0.0
    stopped_early: bool = False

    def lines(self) -> List[str]:
        return [f"{r.step}\t{r.loss:.10g}\t{r.dev_f1:.10g}" for r in self.records]


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Params, grads: Params, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    if config.clip_norm > 0:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > config.clip_norm:
            scale = config.clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        params[name] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return params, state


def decide_labels(probs: np.ndarray, catalog: LabelCatalog) -> List[FrozenSet[str]]:
    """Labels whose probability reaches the (inclusive) 0.5 threshold."""
    return [frozenset(catalog.labels[j] for j in np.nonzero(row >= THRESHOLD)[0]) for row in probs]


def dev_f1(params: Params, config: EncoderConfig, dev: Sequence[Example], catalog: LabelCatalog,
           pad_id: int) -> float:
    probs = predict_proba(params, config, [e.encoded for e in dev], pad_id=pad_id)
    pred = {i: s for i, s in enumerate(decide_labels(probs, catalog))}
    gold = {i: e.labels for i, e in enumerate(dev)}
    return micro_prf(gold, pred).f1


def train_one(model_init_seed: int, train: Sequence[Example], dev: Sequence[Example],
              train_config: TrainConfig, encoder_config: EncoderConfig,
              vocab: SubwordVocab, catalog: LabelCatalog) -> Tuple[Checkpoint, TrainLog]:
    """Train one model and return its best-dev-F1 checkpoint with the log.

    Stops once ``patience`` consecutive evaluations bring no strict
    improvement, or after ``max_epochs``.
    """
    if not train:
        raise ValueError("empty training set")
    if not dev:
        raise ValueError("empty development set")
    seed = model_init_seed
    encoder_config = replace(encoder_config, seed=seed)
    params = init_params(encoder_config, len(vocab), len(catalog), seed=seed)
    weights = compute_class_weights(catalog)
    y_all = encode_labels([e.labels for e in train], catalog)
    order_rng = np.random.default_rng([seed, 1])
    drop_rng = np.random.default_rng([seed, 2])
    state = AdamState()
    tlog = TrainLog()
    best = {k: v.copy() for k, v in params.items()}
    since_best = 0
    step = 0
    losses: List[float] = []
    pad = vocab.pad_id
    n = len(train)

    def evaluate_now(epoch) -> bool:
        nonlocal best, since_best, losses
        f1 = dev_f1(params, encoder_config, dev, catalog, pad)
        loss = float(np.mean(losses)) if losses else float("nan")
        losses = []
        tlog.records.append(EvalRecord(step, epoch, loss, f1))
        log.debug("seed %d step %d loss %.6f dev_f1 %.4f", seed, step, loss, f1)
        if tlog.best_step < 0 or f1 > tlog.best_f1:
            tlog.best_step, tlog.best_f1 = step, f1
            best = {k: v.copy() for k, v in params.items()}
            since_best = 0
        else:
            since_best += 1
        return since_best >= train_config.patience

    stop = False
    for epoch in range(1, train_config.max_epochs + 1):
        perm = order_rng.permutation(n)
        for i in range(0, n, train_config.batch_size):
            idx = perm[i:i + train_config.batch_size]
            batch = collate([train[j].encoded for j in idx], pad)
            y = y_all[idx]
            probs, cache = forward(params, encoder_config, batch, train=True, rng=drop_rng)
            losses.append(weighted_bce(probs, y, weights))
            grads = backward(params, encoder_config, cache, y, weights)
            adam_step(params, grads, state, train_config)
            step += 1
            if train_config.eval_every and step % train_config.eval_every == 0:
                if evaluate_now(epoch):
                    stop = True
                    break
        if stop:
            break
        if not train_config.eval_every and evaluate_now(epoch):
            stop = True
            break
    tlog.stopped_early = stop
    meta = {"seed": seed, "family": encoder_config.family, "best_step": tlog.best_step,
            "dev_f1": tlog.best_f1, "train_config": train_config.to_dict()}
    return Checkpoint(encoder_config, vocab, catalog, best, meta), tlog
