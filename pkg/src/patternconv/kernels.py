"""Hot numeric kernels: batched convolution and discrete pattern matching.

Numba-jitted implementations are used by default; set PATTERNCONV_NO_NUMBA=1
to force the pure-numpy path (same results, useful for debugging and as a
benchmark baseline — see benchmarks/bench_kernels.py).
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("PATTERNCONV_NO_NUMBA", "") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def pad_clips(X: np.ndarray, padding: int) -> np.ndarray:
    """Zero-pad (B, L, d) clip batches along the step axis."""
    if padding == 0:
        return X
    return np.pad(X, ((0, 0), (padding, padding), (0, 0)))


def windows(Xp: np.ndarray, k: int) -> np.ndarray:
    """All length-k step windows of padded clips: (B, C, k, d) view."""
    v = np.lib.stride_tricks.sliding_window_view(Xp, k, axis=1)
    return v.transpose(0, 1, 3, 2)


def _conv_forward_np(W: np.ndarray, Xp: np.ndarray) -> np.ndarray:
    k = W.shape[1]
    return np.einsum("mkd,bckd->bmc", W, windows(Xp, k), optimize=True)


def _conv_backward_np(dh: np.ndarray, Xp: np.ndarray, k: int) -> np.ndarray:
    return np.einsum("bmc,bckd->mkd", dh, windows(Xp, k), optimize=True)


def _match_first_window_np(cells: np.ndarray, Xp: np.ndarray) -> np.ndarray:
    k = cells.shape[1]
    counts = np.einsum("pkd,bckd->pbc", cells.astype(np.float64),
                       windows(Xp, k).astype(np.float64), optimize=True)
    needed = cells.reshape(cells.shape[0], -1).sum(axis=1).astype(np.float64)
    hit = counts >= needed[:, None, None] - 0.5
    first = np.where(hit.any(axis=2), hit.argmax(axis=2), -1)
    return first.astype(np.int64)


if USE_NUMBA:

    @njit(cache=True)
    def _conv_forward_nb(W, Xp):
        M, k, d = W.shape
        B, Lp, _ = Xp.shape
        C = Lp - k + 1
        h = np.zeros((B, M, C))
        for b in range(B):
            for m in range(M):
                for c in range(C):
                    acc = 0.0
                    for n in range(k):
                        for j in range(d):
                            acc += W[m, n, j] * Xp[b, c + n, j]
                    h[b, m, c] = acc
        return h

    @njit(cache=True)
    def _conv_backward_nb(dh, Xp, k):
        B, M, C = dh.shape
        d = Xp.shape[2]
        dW = np.zeros((M, k, d))
        for b in range(B):
            for m in range(M):
                for c in range(C):
                    g = dh[b, m, c]
                    if g == 0.0:
                        continue
                    for n in range(k):
                        for j in range(d):
                            dW[m, n, j] += g * Xp[b, c + n, j]
        return dW

    @njit(cache=True)
    def _match_first_window_nb(cells, Xp):
        P, k, d = cells.shape
        B, Lp, _ = Xp.shape
        C = Lp - k + 1
        out = np.full((P, B), -1, dtype=np.int64)
        for p in range(P):
            for b in range(B):
                for c in range(C):
                    ok = True
                    for n in range(k):
                        for j in range(d):
                            if cells[p, n, j] == 1 and Xp[b, c + n, j] == 0:
                                ok = False
                                break
                        if not ok:
                            break
                    if ok:
                        out[p, b] = c
                        break
        return out


def conv_forward_batch(W: np.ndarray, Xp: np.ndarray) -> np.ndarray:
    """Pre-activation feature maps (B, M, C) for padded clips (B, Lp, d)."""
    if USE_NUMBA:
        return _conv_forward_nb(np.ascontiguousarray(W), np.ascontiguousarray(Xp, dtype=np.float64))
    return _conv_forward_np(W, Xp.astype(np.float64))


def conv_backward_batch(dh: np.ndarray, Xp: np.ndarray, k: int) -> np.ndarray:
    """Accumulate dL/dW (M, k, d) from feature-map gradients (B, M, C)."""
    if USE_NUMBA:
        return _conv_backward_nb(np.ascontiguousarray(dh), np.ascontiguousarray(Xp, dtype=np.float64), k)
    return _conv_backward_np(dh, Xp.astype(np.float64), k)


def match_first_window(cells: np.ndarray, Xp: np.ndarray) -> np.ndarray:
    """First matching window index per (pattern, clip), -1 when none.

    A pattern matches a window when every 1-cell is 1 in the (padded) clip;
    0-cells are unconstrained.
    """
    cells = np.ascontiguousarray(cells, dtype=np.uint8)
    Xp = np.ascontiguousarray(Xp, dtype=np.uint8)
    if cells.size == 0 or Xp.shape[0] == 0:
        return np.full((cells.shape[0], Xp.shape[0]), -1, dtype=np.int64)
    if USE_NUMBA:
        return _match_first_window_nb(cells, Xp)
    return _match_first_window_np(cells, Xp)
