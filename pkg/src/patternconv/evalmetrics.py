"""Classification metrics: accuracy, AUC, Cohen's kappa, precision, recall."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    auc: float | None
    kappa: float | None
    precision: float | None
    recall: float | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


def confusion(scores, labels, threshold: float = 0.5) -> Confusion:
    """Counts with the >= threshold positive rule."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise DataError("scores and labels must have the same length")
    pred = scores >= threshold
    return Confusion(
        tp=int((pred & labels).sum()),
        fp=int((pred & ~labels).sum()),
        tn=int((~pred & ~labels).sum()),
        fn=int((~pred & labels).sum()),
    )


def accuracy(c: Confusion) -> float:
    return (c.tp + c.tn) / c.total if c.total else 0.0


def precision(c: Confusion) -> float | None:
    denom = c.tp + c.fp
    return c.tp / denom if denom else None


def recall(c: Confusion) -> float | None:
    denom = c.tp + c.fn
    return c.tp / denom if denom else None


def kappa(c: Confusion) -> float | None:
    """Two-class Cohen's kappa; None when expected agreement is 1."""
    n = c.total
    if n == 0:
        return None
    p_o = (c.tp + c.tn) / n
    pred_pos = (c.tp + c.fp) / n
    actual_pos = (c.tp + c.fn) / n
    p_e = pred_pos * actual_pos + (1 - pred_pos) * (1 - actual_pos)
    if p_e == 1.0:
        return None
    return (p_o - p_e) / (1 - p_e)


def auc(scores, labels) -> float | None:
    """Mann-Whitney AUC: P(random positive outscores random negative), ties 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pos = scores[labels]
    neg = scores[~labels]
    if pos.size == 0 or neg.size == 0:
        return None
    greater = (pos[:, None] > neg[None, :]).sum()
    equal = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * equal) / (pos.size * neg.size))


def report(scores, labels, threshold: float = 0.5) -> MetricsReport:
    c = confusion(scores, labels, threshold)
    return MetricsReport(
        accuracy=accuracy(c),
        auc=auc(scores, labels),
        kappa=kappa(c),
        precision=precision(c),
        recall=recall(c),
    )


def evaluate(predictor, dataset) -> MetricsReport:
    """One-pass metrics for a scored or discrete predictor over a dataset.

    `predictor` may be a score vector aligned with the dataset, a PatternBank
    (discrete: scores in {0, 1}), or a ModelState (continuous scores).
    """
    from .curator import PatternBank, bank_predict_batch
    from .netcore import ModelState, forward_batch

    if isinstance(predictor, PatternBank):
        scores = bank_predict_batch(predictor, dataset).astype(np.float64)
    elif isinstance(predictor, ModelState):
        scores, _ = forward_batch(predictor, dataset.steps_array().astype(np.float64))
    else:
        scores = np.asarray(predictor, dtype=np.float64)
    return report(scores, dataset.labels())


def render_table(rows: dict[str, MetricsReport]) -> str:
    """Text table with one row per dataset, matching the reported metric set."""
    cols = ["accuracy", "auc", "kappa", "precision", "recall"]
    fmt = lambda v: "   -  " if v is None else f"{v:0.3f}"
    lines = ["set        " + "  ".join(f"{c:>9}" for c in cols)]
    for name, rep in rows.items():
        vals = [getattr(rep, c) for c in cols]
        lines.append(f"{name:<10} " + "  ".join(f"{fmt(v):>9}" for v in vals))
    return "\n".join(lines)
