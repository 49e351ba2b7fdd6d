"""Differentiable computation core: constrained convolution, thresholding head,
traditional head, the alpha blend, and exact analytic gradients."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import DataError

MODEL_FORMAT_VERSION = 1

DEFAULT_STEEPNESS = 200.0
DEFAULT_OFFSET = 0.99
DEFAULT_TEMPERATURE = 0.01
DEFAULT_EPSILON = 1e-6
DEFAULT_DROPOUT = 0.2
DEFAULT_PADDING = 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class ThresholdingParams:
    steepness: float = DEFAULT_STEEPNESS  # t
    offset: float = DEFAULT_OFFSET        # beta
    temperature: float = DEFAULT_TEMPERATURE  # tau
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.steepness <= 0 or self.temperature <= 0 or self.epsilon <= 0:
            raise DataError("thresholding params must be positive")
        if not (0 < self.offset <= 1):
            raise DataError("thresholding offset must lie in (0, 1]")


@dataclass
class ModelState:
    """All network parameters. Only W (and fc_trad until frozen) are learned."""

    W: np.ndarray                 # (M, k, d)
    fc_trad: np.ndarray           # (M,)
    fc_frozen: bool = False
    thresh: ThresholdingParams = field(default_factory=ThresholdingParams)
    alpha: float = 0.0
    dropout_rate: float = DEFAULT_DROPOUT
    padding: int = DEFAULT_PADDING

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise DataError("alpha must lie in [0, 1]")
        if self.fc_trad.shape != (self.W.shape[0],):
            raise DataError("fc_trad length must equal the filter count")

    @property
    def M(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    @property
    def d(self) -> int:
        return self.W.shape[2]

    def copy(self) -> "ModelState":
        return replace(self, W=self.W.copy(), fc_trad=self.fc_trad.copy())


def init_conv_weights(M: int, k: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((M, k, d))


def init_state(M: int, k: int, d: int, padding: int = DEFAULT_PADDING,
               rng: np.random.Generator | int | None = None, **kwargs) -> ModelState:
    """Fresh model: conv weights uniform [0,1), fc uniform [-1/sqrt(M), 1/sqrt(M)]."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    bound = 1.0 / np.sqrt(M)
    return ModelState(
        W=init_conv_weights(M, k, d, rng),
        fc_trad=rng.uniform(-bound, bound, size=M),
        padding=padding,
        **kwargs,
    )


def _as_batch(clip) -> np.ndarray:
    steps = clip.steps if hasattr(clip, "steps") else np.asarray(clip)
    return steps[None, :, :]


def conv_forward(state: ModelState, clip) -> np.ndarray:
    """Post-ReLU feature maps (M, C) for one clip."""
    X = _as_batch(clip)
    if X.shape[2] != state.d:
        raise DataError(f"clip feature width {X.shape[2]} != model d {state.d}")
    if X.shape[1] + 2 * state.padding < state.k:
        raise DataError("clip too short for the kernel even with padding")
    Xp = kernels.pad_clips(X, state.padding)
    h = kernels.conv_forward_batch(state.W, Xp)
    return np.maximum(h[0], 0.0)


def maxpool(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise max with the lowest-index tie-break (for gradient routing)."""
    if h.shape[-1] < 1:
        raise DataError("feature maps need at least one convolution position")
    return h.max(axis=-1), h.argmax(axis=-1)


def thresholding_weights(W: np.ndarray, epsilon: float) -> np.ndarray:
    """Per-filter weight 1 / (sum of |W| + epsilon), recomputed from W every pass."""
    return 1.0 / (np.abs(W).reshape(W.shape[0], -1).sum(axis=1) + epsilon)


def thresholding_forward(f: np.ndarray, w: np.ndarray, params: ThresholdingParams):
    """Four-stage thresholding head on pooled activations.

    Returns (y_thresholding, a, s): scaled-sigmoid activations and their
    low-temperature softmax weights.
    """
    z = f * w
    a = sigmoid(params.steepness * (z - params.offset))
    e = np.exp((a - a.max(axis=-1, keepdims=True)) / params.temperature)
    s = e / e.sum(axis=-1, keepdims=True)
    y = (a * s).sum(axis=-1)
    return y, a, s


def traditional_forward(fm: np.ndarray, fc_trad: np.ndarray) -> float:
    """Conventional head: adaptive max pool to one value per filter, then linear + sigmoid."""
    f, _ = maxpool(fm)
    if f.shape[-1] != fc_trad.shape[0]:
        raise DataError("fc_trad length does not match the pooled width")
    return float(sigmoid(f @ fc_trad))


@dataclass
class ForwardCache:
    Xp: np.ndarray
    h_pre: np.ndarray
    drop_mask: np.ndarray | None
    f: np.ndarray
    argmax: np.ndarray
    w: np.ndarray
    z: np.ndarray
    a: np.ndarray
    s: np.ndarray
    y_trad: np.ndarray
    y_thresh: np.ndarray
    y_preclip: np.ndarray


def forward_batch(state: ModelState, X: np.ndarray, training: bool = False,
                  rng: np.random.Generator | int | None = None):
    """Full forward pass over a clip batch (B, L, d). Returns (y (B,), cache)."""
    X = np.asarray(X)
    if X.shape[2] != state.d:
        raise DataError(f"clip feature width {X.shape[2]} != model d {state.d}")
    Xp = kernels.pad_clips(X, state.padding)
    h_pre = kernels.conv_forward_batch(state.W, Xp)
    h = np.maximum(h_pre, 0.0)

    drop_mask = None
    if training and state.dropout_rate > 0.0:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        keep = 1.0 - state.dropout_rate
        drop_mask = (rng.random(h.shape) < keep).astype(np.float64) / keep
        h = h * drop_mask

    f, arg = maxpool(h)
    w = thresholding_weights(state.W, state.thresh.epsilon)
    y_thresh, a, s = thresholding_forward(f, w, state.thresh)
    y_trad = sigmoid(f @ state.fc_trad)
    y_pre = (1.0 - state.alpha) * y_trad + state.alpha * y_thresh
    y = np.minimum(y_pre, 1.0)
    cache = ForwardCache(Xp=Xp, h_pre=h_pre, drop_mask=drop_mask, f=f, argmax=arg,
                         w=w, z=f * w, a=a, s=s, y_trad=y_trad, y_thresh=y_thresh,
                         y_preclip=y_pre)
    return y, cache


def backward_batch(state: ModelState, cache: ForwardCache, d_y: np.ndarray) -> dict:
    """Analytic gradients summed over the batch.

    Includes the dependence of the thresholding weights w on W (|W| uses the
    sign subgradient, 0 at exactly 0) and argmax-routed pooling gradients.
    Returns {"W": (M,k,d), "fc_trad": (M,)}; fc_trad is zero when frozen.
    """
    t, tau = state.thresh.steepness, state.thresh.temperature
    d_y = np.asarray(d_y, dtype=np.float64) * (cache.y_preclip < 1.0)

    dy_trad = (1.0 - state.alpha) * d_y
    dy_thresh = state.alpha * d_y

    # traditional head
    du = dy_trad * cache.y_trad * (1.0 - cache.y_trad)
    dfc = cache.f.T @ du if not state.fc_frozen else np.zeros_like(state.fc_trad)
    df = du[:, None] * state.fc_trad[None, :]

    # thresholding head: y = sum a_i s_i, s = softmax(a / tau)
    da = dy_thresh[:, None] * (cache.s + cache.s * (cache.a - cache.y_thresh[:, None]) / tau)
    dz = da * t * cache.a * (1.0 - cache.a)
    df += dz * cache.w[None, :]
    dw = (dz * cache.f).sum(axis=0)

    # w_p = 1 / (sum |W_p| + eps)  =>  dw_p/dW = -sign(W) * w_p^2
    dW = (-dw * cache.w**2)[:, None, None] * np.sign(state.W)

    # max pool routes to the recorded argmax; dropout and ReLU backward
    dh = np.zeros_like(cache.h_pre)
    np.put_along_axis(dh, cache.argmax[:, :, None], df[:, :, None], axis=2)
    if cache.drop_mask is not None:
        dh *= cache.drop_mask
    dh *= cache.h_pre > 0.0
    dW += kernels.conv_backward_batch(dh, cache.Xp, state.k)
    return {"W": dW, "fc_trad": dfc}


def model_forward(state: ModelState, clip, training: bool = False,
                  rng: np.random.Generator | int | None = None):
    """Single-clip forward: blended output y in [0, 1] plus the backward cache."""
    y, cache = forward_batch(state, _as_batch(clip), training=training, rng=rng)
    return float(y[0]), cache


def model_backward(state: ModelState, cache: ForwardCache, d_loss_d_y: float) -> dict:
    if cache.y_preclip.shape[0] != 1:
        raise DataError("model_backward expects a single-clip cache")
    return backward_batch(state, cache, np.array([d_loss_d_y]))


def state_to_json(state: ModelState) -> str:
    doc = {
        "format": "patternconv-model",
        "version": MODEL_FORMAT_VERSION,
        "M": state.M,
        "k": state.k,
        "d": state.d,
        "padding": state.padding,
        "W": state.W.ravel().tolist(),
        "fc_trad": state.fc_trad.tolist(),
        "fc_frozen": state.fc_frozen,
        "thresh": {
            "steepness": state.thresh.steepness,
            "offset": state.thresh.offset,
            "temperature": state.thresh.temperature,
            "epsilon": state.thresh.epsilon,
        },
        "alpha": state.alpha,
        "dropout_rate": state.dropout_rate,
    }
    return json.dumps(doc, separators=(",", ":"))


def state_from_json(text: str) -> ModelState:
    doc = json.loads(text)
    if doc.get("format") != "patternconv-model":
        raise DataError("not a model file")
    M, k, d = doc["M"], doc["k"], doc["d"]
    return ModelState(
        W=np.array(doc["W"], dtype=np.float64).reshape(M, k, d),
        fc_trad=np.array(doc["fc_trad"], dtype=np.float64),
        fc_frozen=bool(doc["fc_frozen"]),
        thresh=ThresholdingParams(**doc["thresh"]),
        alpha=float(doc["alpha"]),
        dropout_rate=float(doc["dropout_rate"]),
        padding=int(doc["padding"]),
    )


def filters_to_json(W: np.ndarray, padding: int = DEFAULT_PADDING, extra: dict | None = None) -> str:
    """Filter-only export: the era snapshot format consumed by curation."""
    doc = {
        "format": "patternconv-filters",
        "version": MODEL_FORMAT_VERSION,
        "M": int(W.shape[0]),
        "k": int(W.shape[1]),
        "d": int(W.shape[2]),
        "padding": int(padding),
        "W": W.ravel().tolist(),
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, separators=(",", ":"))


def filters_from_json(text: str) -> tuple[np.ndarray, dict]:
    doc = json.loads(text)
    if doc.get("format") != "patternconv-filters":
        raise DataError("not a filter snapshot file")
    W = np.array(doc["W"], dtype=np.float64).reshape(doc["M"], doc["k"], doc["d"])
    return W, doc
