"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from patternconv import cli, corpus
from patternconv.corpus import FeatureVocabulary
from patternconv.curator import Pattern


@pytest.fixture(scope="session")
def vocab() -> FeatureVocabulary:
    return FeatureVocabulary.default()


@pytest.fixture(scope="session")
def planted(vocab):
    return cli.default_planted_patterns(vocab)


def random_legal_steps(vocab: FeatureVocabulary, L: int, rng: np.random.Generator,
                       p_help: float = 0.3, p_feature: float = 0.15) -> np.ndarray:
    """One random legal clip (L, d) honoring all step invariants."""
    return np.stack([
        corpus._random_legal_step(vocab, rng, p_help, p_feature) for _ in range(L)
    ])


def random_legal_clip_batch(vocab: FeatureVocabulary, n: int, L: int,
                            rng: np.random.Generator, p_help: float = 0.3,
                            p_feature: float = 0.25) -> np.ndarray:
    """Vectorized batch of random legal clips (n, L, d)."""
    d = vocab.d
    X = np.zeros((n, L, d), dtype=np.uint8)
    is_help = rng.random((n, L)) < p_help
    attempt = np.array(vocab.attempt_indices)
    att_choice = attempt[rng.integers(len(attempt), size=(n, L))]
    h_idx = sorted(vocab.help_related)
    a_idx = sorted(vocab.attempt_related)
    X[np.arange(n)[:, None], np.arange(L)[None, :], np.where(is_help, vocab.help_index, att_choice)] = 1
    feats = rng.random((n, L, d)) < p_feature
    X[:, :, h_idx] |= (feats[:, :, h_idx] & is_help[:, :, None]).astype(np.uint8)
    X[:, :, a_idx] |= (feats[:, :, a_idx] & ~is_help[:, :, None]).astype(np.uint8)
    return X


def random_legal_pattern(vocab: FeatureVocabulary, k: int, rng: np.random.Generator,
                         p_cell: float = 0.25) -> Pattern:
    """A random binary pattern honoring the Pattern invariants, >= 1 positive cell."""
    d = vocab.d
    h_idx = sorted(vocab.help_related)
    a_idx = sorted(vocab.attempt_related)
    while True:
        cells = np.zeros((k, d), dtype=np.uint8)
        for n in range(k):
            if rng.random() < 0.7:  # step has a submission requirement
                cells[n, rng.choice(vocab.submission_indices)] = 1
            side = h_idx if rng.random() < 0.5 else a_idx
            for j in side:
                if rng.random() < p_cell:
                    cells[n, j] = 1
        if cells.sum() > 0:
            return Pattern(cells=cells, pattern_id=f"rand-{rng.integers(1 << 30)}")
