"""Multi-era optimization loop: batching, scheduled constraints, clamped SGD,
per-era filter precision, snapshots, and filter harvesting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, netcore, objective
from .corpus import Dataset, FeatureVocabulary
from .curator import DEFAULT_BINARIZE_TOLERANCE, Pattern, binarize
from .errors import DataError, NumericalError
from .netcore import ModelState, backward_batch, forward_batch
from .objective import LossWeights, MinPenaltyParams
from .schedule import ConstraintSchedule, era_reset, weights_at


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    final_learning_rate: float | None = 0.015
    batch_size: int = 64
    schedule: ConstraintSchedule = field(default_factory=lambda: ConstraintSchedule.default())
    min_params: MinPenaltyParams = field(default_factory=MinPenaltyParams)
    harvest_precision_threshold: float = 0.3
    binarize_tolerance: float = DEFAULT_BINARIZE_TOLERANCE
    class_weighting: bool = True
    log_val_metrics: bool = True
    # Dropout annealing. The match band a filter must reach widens with the
    # dropout rate (a training-time "match" only needs overlap >= 0.99 * (1-p)),
    # so decaying p sweeps the band toward exactness. The base term decays
    # linearly over the whole run; the amplitude term re-opens the band at each
    # era start so freshly reinitialized filters can enter a basin, then decays
    # within the era. Set dropout_base to None to keep the model's flat rate.
    dropout_base: float | None = 0.35
    dropout_era_amp: float = 0.45
    anneal_end_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1:
            raise DataError("invalid learning rate or batch size")
        if not 0 < self.anneal_end_fraction <= 1:
            raise DataError("anneal_end_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class EraSnapshot:
    era: int
    W: np.ndarray
    per_filter_precision: np.ndarray
    epoch_losses: tuple

    def __post_init__(self):
        self.W.setflags(write=False)
        self.per_filter_precision.setflags(write=False)


def _pos_weight(dataset: Dataset) -> float:
    n_pos = sum(c.label for c in dataset.clips)
    n_neg = len(dataset) - n_pos
    return n_neg / n_pos if n_pos else 1.0


def anneal_at(config: TrainConfig, epoch_in_era: int, era: int):
    """(dropout_rate, learning_rate) for an epoch, or (None, lr) when dropout
    annealing is disabled. Both decay linearly, finishing at
    `anneal_end_fraction` of the run (the era amplitude within each era)."""
    sched = config.schedule
    total = sched.eras * sched.epochs_per_era
    g = era * sched.epochs_per_era + epoch_in_era
    frac = min(1.0, g / max(config.anneal_end_fraction * total, 1.0))
    lr = config.learning_rate
    if config.final_learning_rate is not None:
        lr = lr + (config.final_learning_rate - lr) * frac
    if config.dropout_base is None:
        return None, lr
    era_frac = min(1.0, epoch_in_era / max(config.anneal_end_fraction * sched.epochs_per_era, 1.0))
    p = config.dropout_base * (1.0 - frac) + config.dropout_era_amp * (1.0 - era_frac)
    return min(max(p, 0.0), 0.99), lr


def train_epoch(state: ModelState, train_set: Dataset, weights: LossWeights,
                alpha: float, freeze: bool, config: TrainConfig,
                rng: np.random.Generator, pos_weight: float = 1.0,
                learning_rate: float | None = None) -> dict:
    """One pass over shuffled mini-batches; mutates `state` in place.

    Per batch: dropout forward, positively-weighted mean BCE plus scaled
    regularizers, analytic backward, SGD step, clamp W to [0, 1].
    Returns the epoch loss record.
    """
    lr = config.learning_rate if learning_rate is None else learning_rate
    vocab = train_set.vocabulary
    state.alpha = alpha
    state.fc_frozen = freeze
    X_all = train_set.steps_array().astype(np.float64)
    labels_all = train_set.labels().astype(np.float64)
    order = rng.permutation(len(train_set))

    bce_sum = 0.0
    grad_norm_conv = 0.0
    grad_norm_fc = 0.0
    n_batches = 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        X, labels = X_all[idx], labels_all[idx]
        y, cache = forward_batch(state, X, training=True, rng=rng)

        clip_w = np.where(labels == 1.0, pos_weight, 1.0)
        batch_bce = float((clip_w * objective.bce(y, labels)).mean())
        reg_value = objective.regularizer_value(state.W, weights, vocab, config.min_params)
        loss = batch_bce + reg_value
        if not math.isfinite(loss):
            term = "bce" if not math.isfinite(batch_bce) else "regularizers"
            raise NumericalError(f"non-finite loss ({term}) at batch starting {start}")

        d_y = clip_w * objective.bce_grad(y, labels) / len(idx)
        grads = backward_batch(state, cache, d_y)
        dW = grads["W"] + objective.regularizer_grad(state.W, weights, vocab, config.min_params)

        state.W -= lr * dW
        np.clip(state.W, 0.0, 1.0, out=state.W)
        if not freeze:
            state.fc_trad -= lr * grads["fc_trad"]

        bce_sum += batch_bce
        grad_norm_conv += float(np.linalg.norm(dW))
        grad_norm_fc += float(np.linalg.norm(grads["fc_trad"]))
        n_batches += 1

    record = {
        "bce": bce_sum / max(n_batches, 1),
        "alpha": alpha,
        "gamma": {"bin": weights.bin, "min": weights.min, "sub": weights.sub, "poss": weights.poss},
        "reg_terms": objective.regularizer_terms(state.W, vocab, config.min_params),
        "grad_norm_conv": grad_norm_conv / max(n_batches, 1),
        "grad_norm_fc": grad_norm_fc / max(n_batches, 1),
        "frozen": freeze,
    }
    return record


def eval_filter_precision(W: np.ndarray, dataset: Dataset, padding: int = 1) -> np.ndarray:
    """Precision of each rounded filter under discrete matching; NaN when a
    filter matches no clip."""
    cells = (W >= 0.5).astype(np.uint8)
    X = dataset.steps_array().astype(np.uint8)
    first = kernels.match_first_window(cells, kernels.pad_clips(X, padding))
    hits = first >= 0
    labels = dataset.labels()
    matched = hits.sum(axis=1)
    tp = (hits & labels[None, :]).sum(axis=1)
    return np.where(matched > 0, tp / np.maximum(matched, 1), np.nan)


def harvest_filters(W: np.ndarray, precisions: np.ndarray, era: int,
                    vocab: FeatureVocabulary, threshold: float,
                    tolerance: float) -> list[Pattern]:
    """Binarize filters whose discrete precision clears the threshold; filters
    failing binarization (non-binary cells or invariant violations) are dropped."""
    out = []
    for m in range(W.shape[0]):
        if not np.isnan(precisions[m]) and precisions[m] > threshold:
            pat, _reason = binarize(W[m], vocab, tolerance=tolerance,
                                    pattern_id=f"e{era:03d}f{m:04d}", source_era=era)
            if pat is not None:
                out.append(Pattern(cells=pat.cells, pattern_id=pat.pattern_id,
                                   precision_train=float(precisions[m]), source_era=era))
    return out


def train_full(config: TrainConfig, train_set: Dataset, val_set: Dataset | None,
               M: int, k: int, d: int, padding: int = netcore.DEFAULT_PADDING,
               log=None):
    """Run the full era protocol.

    Each era: epochs under the staggered schedule, then filter precisions on
    the training set, an immutable snapshot, harvesting of qualifying
    binarized filters, and reinitialization of empty/low-precision filters
    (between eras). Deterministic given the config seed.
    """
    if d != train_set.vocabulary.d:
        raise DataError("model d does not match the dataset vocabulary")
    sched = config.schedule
    rng = np.random.default_rng(config.seed)
    state = netcore.init_state(M, k, d, padding=padding, rng=rng)
    pos_weight = _pos_weight(train_set) if config.class_weighting else 1.0
    val_X = val_set.steps_array().astype(np.float64) if val_set is not None and len(val_set) else None

    snapshots: list[EraSnapshot] = []
    harvested: list[Pattern] = []
    for era in range(sched.eras):
        epoch_records = []
        for epoch in range(sched.epochs_per_era):
            weights, alpha, freeze = weights_at(sched, epoch, era)
            dropout, lr = anneal_at(config, epoch, era)
            if dropout is not None:
                state.dropout_rate = dropout
            record = train_epoch(state, train_set, weights, alpha, freeze, config,
                                 rng, pos_weight, learning_rate=lr)
            record.update(era=era, epoch=epoch, learning_rate=lr,
                          dropout_rate=state.dropout_rate)
            if config.log_val_metrics and val_X is not None:
                from .evalmetrics import confusion, kappa
                y_val, _ = forward_batch(state, val_X)
                record["val_kappa"] = kappa(confusion(y_val, val_set.labels()))
            if log is not None:
                log(record)
            epoch_records.append(record)

        precisions = eval_filter_precision(state.W, train_set, padding)
        snapshots.append(EraSnapshot(era=era, W=state.W.copy(),
                                     per_filter_precision=precisions.copy(),
                                     epoch_losses=tuple(epoch_records)))
        harvested.extend(harvest_filters(state.W, precisions, era, train_set.vocabulary,
                                         config.harvest_precision_threshold,
                                         config.binarize_tolerance))
        if era < sched.eras - 1:
            state = era_reset(state, precisions, sched, rng)
    return state, snapshots, harvested
