"""Micro and per-relation precision/recall/F1, the F1-vs-train-count fit, and reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

from .ensemble import Key, PredictionSet


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass(frozen=True)
class LabelMetrics:
    precision: float
    recall: float
    f1: float
    gold_count: int
    pred_count: int
    tp: int
    fp: int
    fn: int
    # no gold and no predictions: F1 reported as 0 but meaningless
    empty: bool = False


@dataclass
class EvalReport:
    micro: PRF
    per_label: Dict[str, LabelMetrics] = field(default_factory=dict)
    fit: Optional[Tuple[float, float]] = None
    train_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def micro_precision(self) -> float:
        return self.micro.precision

    @property
    def micro_recall(self) -> float:
        return self.micro.recall

    @property
    def micro_f1(self) -> float:
        return self.micro.f1


def _pairs(preds: PredictionSet, label: Optional[str] = None):
    return {(k, l) for k, labels in preds.items() for l in labels if label is None or l == label}


def prf_from_counts(tp: int, fp: int, fn: int) -> PRF:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(p, r, f, tp, fp, fn)


def micro_prf(gold: PredictionSet, pred: PredictionSet) -> PRF:
    """Exact matching on (instance key, label) pairs."""
    g, p = _pairs(gold), _pairs(pred)
    tp = len(g & p)
    return prf_from_counts(tp, len(p) - tp, len(g) - tp)


def per_label_prf(gold: PredictionSet, pred: PredictionSet, labels: Iterable[str]) -> Dict[str, LabelMetrics]:
    out = {}
    for label in labels:
        g, p = _pairs(gold, label), _pairs(pred, label)
        tp = len(g & p)
        m = prf_from_counts(tp, len(p) - tp, len(g) - tp)
        out[label] = LabelMetrics(m.precision, m.recall, m.f1, len(g), len(p), m.tp, m.fp, m.fn,
                                  empty=not g and not p)
    return out


def least_squares_fit(points: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """Ordinary least squares line ``y = slope * x + intercept``."""
    if len(points) < 2:
        raise ValueError("need at least two points")
    xs = [float(x) for x, _ in points]
    ys = [float(y) for _, y in points]
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    var = sum((x - mx) ** 2 for x in xs)
    if var == 0.0:
        raise ValueError("all x values are equal; slope undefined")
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = cov / var
    return slope, my - slope * mx


def evaluate(gold: PredictionSet, pred: PredictionSet, labels: Optional[Iterable[str]] = None,
             train_counts: Optional[Dict[str, int]] = None) -> EvalReport:
    if labels is None:
        found = set()
        for s in list(gold.values()) + list(pred.values()):
            found.update(s)
        labels = sorted(found)
    labels = list(labels)
    report = EvalReport(micro_prf(gold, pred), per_label_prf(gold, pred, labels))
    if train_counts:
        pts = [(train_counts[l], report.per_label[l].f1) for l in labels if l in train_counts]
        report.train_counts = dict(train_counts)
        if len({x for x, _ in pts}) >= 2:
            report.fit = least_squares_fit(pts)
    return report


def render_report(report: EvalReport, fmt: str = "text") -> str:
    header = "label\tprecision\trecall\tf1\tgold\tpred"
    rows = [f"{l}\t{m.precision:.4f}\t{m.recall:.4f}\t{m.f1:.4f}\t{m.gold_count}\t{m.pred_count}"
            for l, m in report.per_label.items()]
    if fmt == "tsv":
        return "\n".join([header] + rows) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    mi = report.micro
    lines = [
        f"micro precision\t{mi.precision:.4f}",
        f"micro recall\t{mi.recall:.4f}",
        f"micro f1\t{mi.f1:.4f}",
        f"tp\t{mi.tp}\tfp\t{mi.fp}\tfn\t{mi.fn}",
        "",
        header,
    ] + rows
    if report.fit is not None:
        lines += ["", f"fit f1 = {report.fit[0]:.6g} * train_count + {report.fit[1]:.6g}"]
    return "\n".join(lines) + "\n"


def label_sets_to_predictions(keys: Sequence[Key], label_sets: Sequence[Iterable[str]]) -> PredictionSet:
    return {k: frozenset(s) for k, s in zip(keys, label_sets)}
