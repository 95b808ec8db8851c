from __future__ import annotations

from datetime import date
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from framework.errors import ShapeMismatch
from models.danger import GATES, ConvLstmWeights, DangerMap, ModelConfig, check_thresholds
from models.grid import Grid, SampleTensor

FIRE, NO_FIRE = 1, 0


def conv2d_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Cross-correlation with zero 'same' padding: (N, C, H, W) x (O, C, k, k) -> (N, O, H, W)."""
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    return np.einsum("nchwij,ocij->nohw", windows, w)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _step(x: np.ndarray, h: np.ndarray, c: np.ndarray, w: ConvLstmWeights) -> Tuple[np.ndarray, np.ndarray]:
    gates = {}
    for g in GATES:
        z = conv2d_same(x, w[f"W_x{g}"].astype(np.float64)) + conv2d_same(h, w[f"W_h{g}"].astype(np.float64))
        gates[g] = z + w[f"b_{g}"].astype(np.float64)[None, :, None, None]
    i = _sigmoid(gates["i"])
    f = _sigmoid(gates["f"])
    o = _sigmoid(gates["o"])
    g = np.tanh(gates["g"])
    c_next = f * c + i * g
    h_next = o * np.tanh(c_next)
    return h_next, c_next


def convlstm_cell_step(
    x_t: np.ndarray,
    state: Tuple[np.ndarray, np.ndarray],
    weights: ConvLstmWeights,
) -> Tuple[np.ndarray, np.ndarray]:
    """One ConvLSTM step (no peepholes).

    x_t is (nf, h, w) and state is (H, C), each (hidden, h, w); a leading batch
    axis is accepted on all three.
    """
    h, c = state
    unbatched = np.ndim(x_t) == 3
    x = np.asarray(x_t, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if unbatched:
        x, h, c = x[None], h[None], c[None]
    hidden, nf = weights["W_xi"].shape[:2]
    if x.ndim != 4 or x.shape[1] != nf:
        raise ShapeMismatch("x_t", (nf, "h", "w"), tuple(np.shape(x_t)))
    expected = (x.shape[0], hidden) + x.shape[2:]
    for label, arr in (("H", h), ("C", c)):
        if arr.shape != expected:
            raise ShapeMismatch(label, expected[1:] if unbatched else expected, arr.shape[1:] if unbatched else arr.shape)
    h_next, c_next = _step(x, h, c, weights)
    return (h_next[0], c_next[0]) if unbatched else (h_next, c_next)


def _softmax2(logits: np.ndarray) -> np.ndarray:
    # logits (N, 2, h, w)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


def _forward(x: np.ndarray, cfg: ModelConfig, w: ConvLstmWeights) -> np.ndarray:
    """x (N, nf, days, h, w) -> class probabilities (N, 2, h, w)."""
    n, _, days, hh, ww = x.shape
    h = np.zeros((n, cfg.hidden, hh, ww))
    c = np.zeros_like(h)
    for t in range(days):
        h, c = convlstm_cell_step(x[:, :, t], (h, c), w)
    logits = np.einsum("kc,nchw->nkhw", w["head_W"].astype(np.float64), h)
    logits = logits + w["head_b"].astype(np.float64)[None, :, None, None]
    return _softmax2(logits)


def classify_danger(p_fire: Grid, thresholds: Sequence[float]) -> Grid:
    """Category = 1 + number of thresholds <= p (a boundary value belongs to the upper class)."""
    t = np.asarray(check_thresholds(thresholds))
    category = np.searchsorted(t, p_fire.values.astype(np.float64), side="right") + 1
    return p_fire.replace(name="category", units="1", values=category)


def infer_region(
    sample: SampleTensor,
    cfg: ModelConfig,
    w: ConvLstmWeights,
    mode: str = "dense",
    patch_size: int = 5,
    pilot: str = "",
    provenance: Optional[Dict[str, Dict[str, str]]] = None,
) -> DangerMap:
    """Run the classifier over the region.

    Dense mode convolves the whole grid at once. Patch mode runs the network on
    a zero-padded patch_size x patch_size window around every pixel and keeps
    the centre prediction.
    """
    nf, days, hh, ww = sample.values.shape
    if (nf, days) != (cfg.nf, cfg.days):
        raise ShapeMismatch("sample", (cfg.nf, cfg.days, hh, ww), sample.values.shape)
    x = sample.values.astype(np.float64)

    if mode == "dense":
        probs = _forward(x[None], cfg, w)[0]
    elif mode == "patch":
        if patch_size % 2 == 0:
            raise ShapeMismatch("patch", ("odd",), (patch_size,))
        r = patch_size // 2
        xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)))
        patches = sliding_window_view(xp, (patch_size, patch_size), axis=(2, 3))
        batch = patches.transpose(2, 3, 0, 1, 4, 5).reshape(hh * ww, nf, days, patch_size, patch_size)
        centre = _forward(np.ascontiguousarray(batch), cfg, w)[:, :, r, r]
        probs = centre.T.reshape(2, hh, ww)
    else:
        raise ValueError(f"unknown inference mode {mode!r}")

    forecast: date = sample.dates[-1]
    template = Grid(name="p_fire", units="1", lat=sample.lat, lon=sample.lon, values=probs[FIRE])
    p_fire = template
    p_nofire = template.replace(name="p_nofire", values=probs[NO_FIRE])
    return DangerMap(
        pilot=pilot,
        p_fire=p_fire,
        p_nofire=p_nofire,
        category=classify_danger(p_fire, cfg.thresholds),
        forecast_date=forecast,
        provenance=dict(provenance or {}),
    )
