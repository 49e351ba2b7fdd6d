"""Binary sequential data model: vocabularies, clips, datasets, splits, synthesis."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

CLIP_FORMAT_NAME = "patternconv-clips"
CLIP_FORMAT_VERSION = 1

DEFAULT_CLIP_LENGTH = 5


@dataclass(frozen=True)
class FeatureVocabulary:
    """Names and index partitions of the binary feature space.

    The feature space is partitioned into three submission types (help,
    correct attempt, incorrect attempt), a help-related set and an
    attempt-related set.
    """

    feature_names: tuple[str, ...]
    submission_indices: tuple[int, ...]
    help_related: frozenset[int]
    attempt_related: frozenset[int]

    def __post_init__(self):
        d = len(self.feature_names)
        if len(self.submission_indices) != 3:
            raise DataError("vocabulary must have exactly 3 submission types")
        sub = set(self.submission_indices)
        if sub & self.help_related or sub & self.attempt_related:
            raise DataError("submission indices overlap a feature set")
        if self.help_related & self.attempt_related:
            raise DataError("help-related and attempt-related sets overlap")
        if sub | self.help_related | self.attempt_related != set(range(d)):
            raise DataError("index partition does not cover the feature space")
        if d < 4:
            raise DataError("vocabulary needs at least one non-submission feature")

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def help_index(self) -> int:
        """Index of the help submission type (first submission index)."""
        return self.submission_indices[0]

    @property
    def attempt_indices(self) -> tuple[int, ...]:
        return self.submission_indices[1:]

    @classmethod
    def default(cls) -> "FeatureVocabulary":
        """3 submission types + 5 help-related + 5 attempt-related, d = 13."""
        names = (
            "help",
            "correct",
            "incorrect",
            "quick_help_request",
            "bottom_out_search",
            "repeated_help",
            "help_after_error",
            "help_same_step",
            "similar_answer",
            "answer_reuse",
            "quick_attempt",
            "repeated_error",
            "guess_like_entry",
        )
        return cls(
            feature_names=names,
            submission_indices=(0, 1, 2),
            help_related=frozenset(range(3, 8)),
            attempt_related=frozenset(range(8, 13)),
        )

    def to_record(self) -> dict:
        return {
            "format": CLIP_FORMAT_NAME,
            "version": CLIP_FORMAT_VERSION,
            "feature_names": list(self.feature_names),
            "submission_indices": list(self.submission_indices),
            "help_related": sorted(self.help_related),
            "attempt_related": sorted(self.attempt_related),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FeatureVocabulary":
        try:
            return cls(
                feature_names=tuple(rec["feature_names"]),
                submission_indices=tuple(rec["submission_indices"]),
                help_related=frozenset(rec["help_related"]),
                attempt_related=frozenset(rec["attempt_related"]),
            )
        except KeyError as e:
            raise DataError(f"vocabulary header missing key {e}") from None


def check_steps(steps: np.ndarray, vocab: FeatureVocabulary) -> str | None:
    """Return a violation message for a steps matrix, or None when legal."""
    if steps.ndim != 2 or steps.shape[1] != vocab.d:
        return f"feature count {steps.shape[-1] if steps.ndim == 2 else '?'} does not match vocabulary d={vocab.d}"
    if not np.isin(steps, (0, 1)).all():
        return "non-binary feature value"
    sub = list(vocab.submission_indices)
    h = sorted(vocab.help_related)
    a = sorted(vocab.attempt_related)
    for n in range(steps.shape[0]):
        row = steps[n]
        n_sub = int(row[sub].sum())
        if n_sub != 1:
            return f"step {n}: {'multiple submission types' if n_sub > 1 else 'no submission type'}"
        h_on = int(row[h].sum()) if h else 0
        a_on = int(row[a].sum()) if a else 0
        if h_on and a_on:
            return f"step {n}: help- and attempt-related features both active"
        is_help = row[vocab.help_index] == 1
        if h_on and not is_help:
            return f"step {n}: help-related feature without help submission"
        if a_on and is_help:
            return f"step {n}: attempt-related feature on a help step"
    return None


@dataclass(frozen=True)
class Clip:
    """A labeled sequence of binary action-step vectors."""

    clip_id: str
    steps: np.ndarray  # (L, d) uint8, read-only
    label: bool

    def __post_init__(self):
        self.steps.setflags(write=False)

    @property
    def length(self) -> int:
        return self.steps.shape[0]

    def to_record(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "label": int(self.label),
            "steps": self.steps.astype(int).tolist(),
        }


@dataclass(frozen=True)
class Dataset:
    vocabulary: FeatureVocabulary
    clips: tuple[Clip, ...]

    @property
    def positive_rate(self) -> float:
        if not self.clips:
            return 0.0
        return sum(c.label for c in self.clips) / len(self.clips)

    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clips], dtype=bool)

    def steps_array(self) -> np.ndarray:
        """All clips stacked as (n_clips, L, d). Requires uniform length."""
        return np.stack([c.steps for c in self.clips]) if self.clips else np.zeros((0, 0, self.vocabulary.d), dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.clips)


def _validate_clip_record(rec: dict, vocab: FeatureVocabulary) -> Clip:
    for key in ("clip_id", "label", "steps"):
        if key not in rec:
            raise DataError(f"malformed clip record: missing '{key}'")
    steps = np.asarray(rec["steps"], dtype=np.uint8)
    reason = check_steps(steps, vocab)
    if reason is not None:
        raise DataError(f"clip '{rec['clip_id']}': {reason}")
    if rec["label"] not in (0, 1, True, False):
        raise DataError(f"clip '{rec['clip_id']}': label must be 0 or 1")
    return Clip(clip_id=str(rec["clip_id"]), steps=steps, label=bool(rec["label"]))


def load_dataset(path, vocabulary: FeatureVocabulary | None = None) -> Dataset:
    """Load a line-delimited clip file, rejecting the whole file on any violation."""
    clips = []
    header_vocab = None
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno + 1}: malformed record: {e}") from None
            if rec.get("format") == CLIP_FORMAT_NAME:
                header_vocab = FeatureVocabulary.from_record(rec)
                continue
            vocab = vocabulary or header_vocab
            if vocab is None:
                raise DataError(f"{path}: clip record before vocabulary header")
            clips.append(_validate_clip_record(rec, vocab))
    vocab = vocabulary or header_vocab
    if vocab is None:
        raise DataError(f"{path}: no vocabulary header and none supplied")
    if vocabulary is not None and header_vocab is not None and header_vocab != vocabulary:
        raise DataError(f"{path}: file vocabulary differs from the supplied one")
    return Dataset(vocabulary=vocab, clips=tuple(clips))


def write_dataset(dataset: Dataset, path, meta: dict | None = None) -> None:
    """Write the canonical line-delimited form (round-trips byte-identically
    when no meta keys are added to the header)."""
    header = dataset.vocabulary.to_record()
    if meta:
        header.update(meta)
    with open(path, "w") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for clip in dataset.clips:
            fh.write(json.dumps(clip.to_record(), separators=(",", ":")) + "\n")


def stratified_split(
    dataset: Dataset,
    test_fraction: float,
    val_fraction_of_remainder: float,
    seed: int,
) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic stratified (train, val, test) split."""
    if not (0 < test_fraction < 1) or not (0 < val_fraction_of_remainder < 1):
        raise DataError("split fractions must lie in (0, 1)")
    pos = [c for c in dataset.clips if c.label]
    neg = [c for c in dataset.clips if not c.label]
    if not pos or not neg:
        raise DataError("stratified split needs at least one clip of each class")

    rng = np.random.default_rng(seed)

    def carve(group: list[Clip]) -> tuple[list[Clip], list[Clip], list[Clip]]:
        order = rng.permutation(len(group))
        shuffled = [group[i] for i in order]
        n_test = round(test_fraction * len(group))
        test = shuffled[:n_test]
        rest = shuffled[n_test:]
        n_val = round(val_fraction_of_remainder * len(rest))
        return rest[n_val:], rest[:n_val], test

    train_p, val_p, test_p = carve(pos)
    train_n, val_n, test_n = carve(neg)
    train, val, test = train_p + train_n, val_p + val_n, test_p + test_n
    if not train or not val or not test:
        raise DataError("split fractions leave an empty split")
    mk = lambda clips: Dataset(vocabulary=dataset.vocabulary, clips=tuple(clips))
    return mk(train), mk(val), mk(test)


def _random_legal_step(vocab: FeatureVocabulary, rng: np.random.Generator,
                       p_help: float, p_feature: float) -> np.ndarray:
    row = np.zeros(vocab.d, dtype=np.uint8)
    if rng.random() < p_help:
        row[vocab.help_index] = 1
        active_set = sorted(vocab.help_related)
    else:
        row[rng.choice(vocab.attempt_indices)] = 1
        active_set = sorted(vocab.attempt_related)
    for j in active_set:
        if rng.random() < p_feature:
            row[j] = 1
    return row


def _stamp(steps: np.ndarray, cells: np.ndarray, window: int, vocab: FeatureVocabulary,
           rng: np.random.Generator) -> None:
    """Overlay a pattern's required cells at `window`, re-enforcing step invariants."""
    sub = list(vocab.submission_indices)
    h = sorted(vocab.help_related)
    a = sorted(vocab.attempt_related)
    for n in range(cells.shape[0]):
        req = np.flatnonzero(cells[n])
        if req.size == 0:
            continue
        row = steps[window + n]
        req_sub = [j for j in req if j in vocab.submission_indices]
        req_h = [j for j in req if j in vocab.help_related]
        req_a = [j for j in req if j in vocab.attempt_related]
        if req_sub:
            row[sub] = 0
            row[req_sub[0]] = 1
        elif req_h and row[vocab.help_index] == 0:
            row[sub] = 0
            row[vocab.help_index] = 1
        elif req_a and row[vocab.help_index] == 1:
            row[sub] = 0
            row[rng.choice(vocab.attempt_indices)] = 1
        row[req] = 1
        # drop context features now on the wrong side of the help/attempt divide
        if row[vocab.help_index] == 1:
            row[a] = 0
        else:
            row[h] = 0


def synth_generate(
    vocabulary: FeatureVocabulary,
    planted,
    n_clips: int,
    label_noise: float,
    feature_noise: float,
    seed: int,
    clip_length: int = DEFAULT_CLIP_LENGTH,
    p_plant: float = 0.06,
    p_help: float = 0.3,
    p_feature: float = 0.15,
    p_distract: float = 0.0,
    match_padding: int = 1,
) -> Dataset:
    """Generate a planted-pattern dataset with recoverable ground truth.

    `planted` is a list of curator.Pattern. Unstamped clips are rejection-
    sampled until they match no planted pattern, so before noise the label is
    exactly planted-match status.

    `p_distract` is the fraction of negative clips that receive a near-miss
    distractor: a planted pattern with one required cell removed, stamped at a
    random window (re-checked to still match no full pattern). Distractors
    keep any strictly-more-general variant of a planted pattern from being a
    usable classifier, so recovery of a pattern requires recovering it exactly.
    """
    from .curator import discrete_match

    if not (0 <= label_noise < 0.5) or not (0 <= feature_noise < 0.5):
        raise DataError("noise fractions must lie in [0, 0.5)")
    for pat in planted:
        if pat.cells.shape[0] > clip_length:
            raise DataError(f"planted pattern '{pat.pattern_id}' is wider than the clip length")

    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n_clips):
        stamped = bool(planted) and rng.random() < p_plant
        for _ in range(200):
            steps = np.stack([
                _random_legal_step(vocabulary, rng, p_help, p_feature)
                for _ in range(clip_length)
            ])
            if stamped:
                pat = planted[rng.integers(len(planted))]
                window = int(rng.integers(clip_length - pat.cells.shape[0] + 1))
                _stamp(steps, pat.cells, window, vocabulary, rng)
                break
            if not any(discrete_match(p, steps, padding=match_padding)[0] for p in planted):
                break
        else:
            raise DataError("could not generate a non-matching background clip")

        if not stamped and planted and rng.random() < p_distract:
            _stamp_distractor(steps, planted, vocabulary, rng, match_padding)

        label = stamped
        if label_noise and rng.random() < label_noise:
            label = not label
        if feature_noise:
            _apply_feature_noise(steps, vocabulary, feature_noise, rng)
        reason = check_steps(steps, vocabulary)
        if reason is not None:  # pragma: no cover - generator guarantee
            raise DataError(f"generated clip violates invariants: {reason}")
        clips.append(Clip(clip_id=f"synth-{i:06d}", steps=steps, label=label))
    return Dataset(vocabulary=vocabulary, clips=tuple(clips))


def _stamp_distractor(steps: np.ndarray, planted, vocab: FeatureVocabulary,
                      rng: np.random.Generator, match_padding: int,
                      max_tries: int = 50) -> bool:
    """Stamp a drop-one-cell variant of a random planted pattern into `steps`.

    Retries until the clip still matches no full planted pattern and remains
    legal; leaves `steps` unchanged if no legal placement is found.
    """
    from .curator import discrete_match

    for _ in range(max_tries):
        trial = steps.copy()
        pat = planted[rng.integers(len(planted))]
        positions = np.argwhere(pat.cells == 1)
        drop = positions[rng.integers(len(positions))]
        cells = pat.cells.copy()
        cells[drop[0], drop[1]] = 0
        window = int(rng.integers(trial.shape[0] - pat.cells.shape[0] + 1))
        _stamp(trial, cells, window, vocab, rng)
        if not any(discrete_match(p, trial, padding=match_padding)[0] for p in planted) \
                and check_steps(trial, vocab) is None:
            steps[...] = trial
            return True
    return False


def _apply_feature_noise(steps: np.ndarray, vocab: FeatureVocabulary,
                         rate: float, rng: np.random.Generator) -> None:
    """Flip non-submission bits at `rate`, keeping each step legal."""
    for n in range(steps.shape[0]):
        row = steps[n]
        active = sorted(vocab.help_related if row[vocab.help_index] else vocab.attempt_related)
        for j in active:
            if rng.random() < rate:
                row[j] ^= 1
