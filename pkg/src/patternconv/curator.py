"""Pattern curation: binarization, exact matching semantics, dedup,
subsumption pruning, and cumulative-kappa bank selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .corpus import DEFAULT_CLIP_LENGTH, Dataset, FeatureVocabulary
from .errors import DataError
from .evalmetrics import confusion, kappa

BANK_FORMAT_VERSION = 1
DEFAULT_BINARIZE_TOLERANCE = 0.05
LOW_SUPPORT_MATCHES = 3


@dataclass(frozen=True)
class Pattern:
    """A binarized k x d behavioral pattern with provenance metadata."""

    cells: np.ndarray  # (k, d) uint8, read-only
    pattern_id: str
    precision_train: float | None = None
    source_era: int = -1
    low_support: bool = False

    def __post_init__(self):
        self.cells.setflags(write=False)

    @property
    def positives(self) -> frozenset:
        return frozenset(zip(*np.nonzero(self.cells)))

    @property
    def n_positive(self) -> int:
        return int(self.cells.sum())

    def key(self) -> bytes:
        return self.cells.tobytes()

    def to_record(self) -> dict:
        return {
            "pattern_id": self.pattern_id,
            "cells": self.cells.astype(int).tolist(),
            "precision_train": self.precision_train,
            "source_era": self.source_era,
            "low_support": self.low_support,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Pattern":
        return cls(
            cells=np.asarray(rec["cells"], dtype=np.uint8),
            pattern_id=rec["pattern_id"],
            precision_train=rec.get("precision_train"),
            source_era=rec.get("source_era", -1),
            low_support=rec.get("low_support", False),
        )


@dataclass(frozen=True)
class PatternBank:
    patterns: tuple[Pattern, ...]
    vocabulary: FeatureVocabulary

    def __len__(self) -> int:
        return len(self.patterns)

    def cells_tensor(self) -> np.ndarray:
        if not self.patterns:
            k = 0
            return np.zeros((0, k, self.vocabulary.d), dtype=np.uint8)
        return np.stack([p.cells for p in self.patterns])


def pattern_violation(cells: np.ndarray, vocab: FeatureVocabulary) -> str | None:
    """Invariant check for a binary pattern matrix; None when legal."""
    if not np.isin(cells, (0, 1)).all():
        return "non-binary cell"
    if cells.sum() == 0:
        return "all-zero pattern"
    sub = list(vocab.submission_indices)
    h = sorted(vocab.help_related)
    a = sorted(vocab.attempt_related)
    for n in range(cells.shape[0]):
        if cells[n, sub].sum() > 1:
            return f"step {n}: submission invariant"
        if cells[n, h].sum() and cells[n, a].sum():
            return f"step {n}: help/attempt exclusion invariant"
    return None


def binarize(W_filter: np.ndarray, vocab: FeatureVocabulary,
             tolerance: float = DEFAULT_BINARIZE_TOLERANCE,
             pattern_id: str = "", source_era: int = -1) -> tuple[Pattern | None, str | None]:
    """Round a continuous filter at 0.5; returns (pattern, None) or (None, reason)."""
    W_filter = np.asarray(W_filter, dtype=np.float64)
    dist = np.minimum(np.abs(W_filter), np.abs(W_filter - 1.0))
    if (dist > tolerance).any():
        return None, "non-binary cell"
    cells = (W_filter >= 0.5).astype(np.uint8)
    reason = pattern_violation(cells, vocab)
    if reason is not None:
        return None, reason
    return Pattern(cells=cells, pattern_id=pattern_id, source_era=source_era), None


def discrete_match(pattern: Pattern, clip, padding: int = 1) -> tuple[bool, int | None]:
    """Exact matching: a window matches when every 1-cell is 1 in the clip.

    Zero padding lets patterns with empty edge rows act as shorter patterns at
    clip edges. Returns (matched, first window index in padded coordinates).
    """
    steps = clip.steps if hasattr(clip, "steps") else np.asarray(clip)
    cells = pattern.cells if isinstance(pattern, Pattern) else np.asarray(pattern, dtype=np.uint8)
    if steps.shape[1] != cells.shape[1]:
        raise DataError("pattern width does not match the clip feature width")
    Xp = kernels.pad_clips(steps[None].astype(np.uint8), padding)
    first = kernels.match_first_window(cells[None], Xp)[0, 0]
    return (first >= 0), (int(first) if first >= 0 else None)


def match_matrix(patterns, dataset_or_steps, padding: int = 1) -> np.ndarray:
    """(n_patterns, n_clips) first-window matrix, -1 when no match."""
    if isinstance(dataset_or_steps, Dataset):
        X = dataset_or_steps.steps_array()
    else:
        X = np.asarray(dataset_or_steps)
    cells = np.stack([p.cells for p in patterns]) if patterns else np.zeros((0, 1, X.shape[2]), np.uint8)
    return kernels.match_first_window(cells, kernels.pad_clips(X.astype(np.uint8), padding))


def bank_predict(bank: PatternBank, clip, padding: int = 1) -> tuple[bool, list[str]]:
    """OR over all patterns; returns (prediction, matching pattern ids)."""
    steps = clip.steps if hasattr(clip, "steps") else np.asarray(clip)
    if steps.shape[1] != bank.vocabulary.d:
        raise DataError("clip feature width does not match the bank vocabulary")
    if not bank.patterns:
        return False, []
    first = match_matrix(bank.patterns, steps[None], padding)[:, 0]
    ids = [p.pattern_id for p, f in zip(bank.patterns, first) if f >= 0]
    return bool(ids), ids


def bank_predict_batch(bank: PatternBank, dataset: Dataset, padding: int = 1) -> np.ndarray:
    if not bank.patterns:
        return np.zeros(len(dataset), dtype=bool)
    return (match_matrix(bank.patterns, dataset, padding) >= 0).any(axis=0)


def dedup(patterns) -> list[Pattern]:
    """Keep the first occurrence of each distinct cell matrix, stable order."""
    seen = set()
    out = []
    for p in patterns:
        key = p.key()
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def _match_window_range(positives_rows: np.ndarray, k: int, clip_length: int,
                        padding: int) -> tuple[int, int]:
    """Window indices at which a pattern's positive rows all land on real steps."""
    C = clip_length - k + 1 + 2 * padding
    m_min, m_max = int(positives_rows.min()), int(positives_rows.max())
    return max(0, padding - m_min), min(C - 1, padding + clip_length - 1 - m_max)


def subsumes(a: Pattern, b: Pattern, clip_length: int = DEFAULT_CLIP_LENGTH,
             padding: int = 1, check_shifts: bool = True) -> bool:
    """True when a is more general than b: every clip b matches, a matches too.

    Position-aligned containment requires a's positives to be a strict subset
    of b's. Shifted containment additionally requires the shift to keep a's
    match window in range for every window where b can match.
    """
    pos_a, pos_b = a.positives, b.positives
    if pos_a < pos_b:
        return True
    if not check_shifts:
        return False
    k = a.cells.shape[0]
    if b.n_positive == 0:
        return False
    rows_b = np.unique(np.nonzero(b.cells)[0])
    c_min_b, c_max_b = _match_window_range(rows_b, k, clip_length, padding)
    if c_min_b > c_max_b:
        return False  # b can never match; nothing to preserve
    C = clip_length - k + 1 + 2 * padding
    for s in range(-(k - 1), k):
        if s == 0:
            continue
        shifted = {(n + s, j) for (n, j) in pos_a}
        if not all(0 <= n < k for n, _ in shifted):
            continue
        if shifted <= pos_b and c_min_b + s >= 0 and c_max_b + s <= C - 1:
            return True
    return False


def prune_subsumed(patterns, clip_length: int = DEFAULT_CLIP_LENGTH, padding: int = 1,
                   check_shifts: bool = True) -> list[Pattern]:
    """Drop every pattern some other pattern subsumes; mutual (shift-equal)
    pairs keep the earlier one."""
    kept = []
    for j, b in enumerate(patterns):
        dominated = False
        for i, a in enumerate(patterns):
            if i == j:
                continue
            if subsumes(a, b, clip_length, padding, check_shifts) and not (
                subsumes(b, a, clip_length, padding, check_shifts) and j < i
            ):
                dominated = True
                break
        if not dominated:
            kept.append(b)
    return kept


def pattern_precisions(patterns, dataset: Dataset, padding: int = 1):
    """Per-pattern (precision, matched-count) on a dataset; precision is NaN
    for patterns matching nothing."""
    if not patterns:
        return np.zeros(0), np.zeros(0, dtype=int)
    first = match_matrix(patterns, dataset, padding)
    hits = first >= 0
    labels = dataset.labels()
    matched = hits.sum(axis=1)
    tp = (hits & labels[None, :]).sum(axis=1)
    with np.errstate(invalid="ignore"):
        prec = np.where(matched > 0, tp / np.maximum(matched, 1), np.nan)
    return prec, matched


def rank_by_precision(patterns, ranking_set: Dataset, padding: int = 1) -> list[Pattern]:
    """Refresh precisions on ranking_set and sort descending by precision,
    ties broken by pattern_id for determinism. The low_support flag is
    informational metadata and does not affect the order."""
    prec, matched = pattern_precisions(patterns, ranking_set, padding)
    updated = [
        replace(p, precision_train=(None if np.isnan(pr) else float(pr)),
                low_support=bool(m < LOW_SUPPORT_MATCHES))
        for p, pr, m in zip(patterns, prec, matched)
    ]
    return sorted(
        updated,
        key=lambda p: (-(p.precision_train if p.precision_train is not None else -1.0),
                       p.pattern_id),
    )


def cumulative_kappa_curve(patterns, ranking_set: Dataset, eval_set: Dataset,
                           padding: int = 1):
    """Cumulative Cohen's kappa on eval_set over precision-ranked prefixes.

    Returns (sorted_patterns, [(n, kappa), ...]) with one point per prefix.
    """
    ranked = rank_by_precision(patterns, ranking_set, padding)
    labels = eval_set.labels()
    curve = []
    if ranked:
        hits = match_matrix(ranked, eval_set, padding) >= 0
        any_hit = np.zeros(len(eval_set), dtype=bool)
        for n, row in enumerate(hits, start=1):
            any_hit |= row
            kap = kappa(confusion(any_hit.astype(float), labels))
            curve.append((n, kap if kap is not None else 0.0))
    return ranked, curve


def select_bank(curve, sorted_patterns, vocabulary: FeatureVocabulary,
                n_override: int | None = None) -> PatternBank:
    """Prefix maximizing eval kappa (smallest n on ties); n_override wins."""
    if n_override is not None:
        n = n_override
    elif not curve:
        n = 0
    else:
        best = max(k for _, k in curve)
        n = next(i for i, k in curve if k == best)
    return PatternBank(patterns=tuple(sorted_patterns[:n]), vocabulary=vocabulary)


def bank_to_json(bank: PatternBank, extra: dict | None = None) -> str:
    doc = {
        "format": "patternconv-bank",
        "version": BANK_FORMAT_VERSION,
        "vocabulary": bank.vocabulary.to_record(),
        "patterns": [p.to_record() for p in bank.patterns],
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, separators=(",", ":"))


def bank_from_json(text: str) -> PatternBank:
    doc = json.loads(text)
    if doc.get("format") != "patternconv-bank":
        raise DataError("not a pattern bank file")
    return PatternBank(
        patterns=tuple(Pattern.from_record(r) for r in doc["patterns"]),
        vocabulary=FeatureVocabulary.from_record(doc["vocabulary"]),
    )
