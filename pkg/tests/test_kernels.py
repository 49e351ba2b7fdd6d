"""Kernel equivalence: the jitted and pure-numpy paths must agree exactly,
and matching must agree with a brute-force window scan."""

import numpy as np
import pytest

from conftest import random_legal_clip_batch, random_legal_pattern
from patternconv import kernels
from patternconv.corpus import FeatureVocabulary


def _brute_first_window(cells, Xp):
    P, k, d = cells.shape
    B, Lp, _ = Xp.shape
    C = Lp - k + 1
    out = np.full((P, B), -1, dtype=np.int64)
    for p in range(P):
        req = list(zip(*np.nonzero(cells[p])))
        for b in range(B):
            for c in range(C):
                if all(Xp[b, c + n, j] for n, j in req):
                    out[p, b] = c
                    break
    return out


def test_pad_clips_shape_and_content():
    X = np.ones((2, 5, 3), dtype=np.uint8)
    Xp = kernels.pad_clips(X, 1)
    assert Xp.shape == (2, 7, 3)
    assert Xp[:, 0].sum() == 0 and Xp[:, -1].sum() == 0
    assert (Xp[:, 1:-1] == X).all()
    assert kernels.pad_clips(X, 0) is X


def test_match_first_window_against_brute_force(vocab):
    rng = np.random.default_rng(11)
    X = random_legal_clip_batch(vocab, 40, 5, rng)
    cells = np.stack([random_legal_pattern(vocab, 3, rng).cells for _ in range(15)])
    Xp = kernels.pad_clips(X, 1)
    got = kernels.match_first_window(cells, Xp)
    assert (got == _brute_first_window(cells, Xp)).all()


def test_match_empty_inputs():
    out = kernels.match_first_window(np.zeros((0, 3, 5), np.uint8),
                                     np.zeros((4, 7, 5), np.uint8))
    assert out.shape == (0, 4)


def test_numba_and_numpy_paths_agree(vocab):
    if not kernels.USE_NUMBA:
        pytest.skip("numba path disabled (PATTERNCONV_NO_NUMBA)")
    rng = np.random.default_rng(5)
    X = random_legal_clip_batch(vocab, 30, 5, rng)
    Xp = kernels.pad_clips(X, 1).astype(np.float64)
    W = rng.random((8, 3, vocab.d))
    h_nb = kernels._conv_forward_nb(np.ascontiguousarray(W), np.ascontiguousarray(Xp))
    h_np = kernels._conv_forward_np(W, Xp)
    np.testing.assert_allclose(h_nb, h_np, rtol=1e-12, atol=1e-12)

    dh = rng.standard_normal(h_np.shape)
    g_nb = kernels._conv_backward_nb(np.ascontiguousarray(dh), np.ascontiguousarray(Xp), 3)
    g_np = kernels._conv_backward_np(dh, Xp, 3)
    np.testing.assert_allclose(g_nb, g_np, rtol=1e-10, atol=1e-10)

    cells = np.stack([random_legal_pattern(vocab, 3, rng).cells for _ in range(10)])
    Xp8 = kernels.pad_clips(X, 1)
    m_nb = kernels._match_first_window_nb(np.ascontiguousarray(cells), np.ascontiguousarray(Xp8))
    m_np = kernels._match_first_window_np(cells, Xp8)
    assert (m_nb == m_np).all()


def test_conv_forward_matches_direct_sum(vocab):
    rng = np.random.default_rng(7)
    X = random_legal_clip_batch(vocab, 6, 5, rng)
    Xp = kernels.pad_clips(X, 1)
    W = rng.random((4, 3, vocab.d))
    h = kernels.conv_forward_batch(W, Xp)
    b, m, c = 3, 2, 4
    direct = sum(W[m, n, j] * Xp[b, c + n, j] for n in range(3) for j in range(vocab.d))
    assert h[b, m, c] == pytest.approx(direct)
