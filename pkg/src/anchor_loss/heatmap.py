"""Keypoint heatmaps: gaussian targets, the pose anchor loss and pose metrics.

Heatmaps are ``(H, W)`` float64 arrays indexed ``[row, col]``; keypoint
coordinates are ``(x, y) = (col, row)`` in heatmap pixels.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .losses import LossResult
from .numerics import EPS, clamp_probability

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KeypointAnnotation:
    x: float
    y: float
    visible: bool = True
    sigma: float = 1.0


@dataclass(frozen=True)
class PoseLossConfig:
    gamma: float = 2.0
    anchor_threshold: float = 0.5
    floor: float = EPS

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0.0 < self.anchor_threshold < 1.0:
            raise ValueError("anchor_threshold must lie in (0, 1)")


@dataclass
class EncodedHeatmap:
    values: np.ndarray
    truncated: bool = False

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def encode_gaussian(
    annotation: KeypointAnnotation,
    height: int = 64,
    width: int = 64,
    truncate: float = 3.0,
) -> EncodedHeatmap:
    """Render a truncated gaussian target centred on the keypoint.

    Pixels farther than ``truncate * sigma`` from the centre are exactly 0.
    An invisible or out-of-bounds keypoint gives an all-zero map with
    ``truncated=True``.
    """
    values = np.zeros((height, width), dtype=np.float64)
    a = annotation
    if not a.visible or not (0 <= a.x < width and 0 <= a.y < height):
        return EncodedHeatmap(values, truncated=True)
    rows, cols = np.mgrid[0:height, 0:width]
    d2 = (cols - a.x) ** 2 + (rows - a.y) ** 2
    inside = d2 <= (truncate * a.sigma) ** 2
    values[inside] = np.exp(-d2[inside] / (2.0 * a.sigma**2))
    return EncodedHeatmap(values)


def background_mask(target) -> np.ndarray:
    """1 where the target is exactly zero, 0 elsewhere."""
    return (np.asarray(target) == 0.0).astype(np.float64)


def select_anchor(target, prediction, threshold: float = 0.5) -> Optional[float]:
    """Largest prediction over pixels whose target exceeds ``threshold``.

    Returns ``None`` when no target pixel clears the threshold.
    """
    target = np.asarray(target)
    prediction = np.asarray(prediction)
    candidates = target > threshold
    if not candidates.any():
        return None
    return float(prediction[candidates].max())


def _pose_terms(target, prediction, cfg: PoseLossConfig, anchor):
    target = np.asarray(target, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if target.shape != prediction.shape:
        raise ValueError(f"dimension mismatch: target {target.shape} vs prediction {prediction.shape}")
    q = clamp_probability(prediction, cfg.floor)
    mask = background_mask(target)
    if anchor is None:
        anchor = select_anchor(target, q, cfg.anchor_threshold)
        if anchor is None:
            logger.info("no target pixel above %.2f; falling back to BCE", cfg.anchor_threshold)
    return target, q, mask, anchor


def pose_anchor_loss(
    target,
    prediction,
    cfg: PoseLossConfig = PoseLossConfig(),
    anchor: Optional[float] = None,
) -> LossResult:
    """Per-pixel BCE, modulated by ``(1 + q - q*)^gamma`` on background pixels.

    ``per_class`` keeps the ``(H, W)`` per-pixel contributions. ``anchor``
    overrides the anchor read from the prediction.
    """
    p, q, mask, anchor = _pose_terms(target, prediction, cfg, anchor)
    ce = -(p * np.log(q) + (1.0 - p) * np.log1p(-q))
    if anchor is None:
        per_pixel = ce
    else:
        mod = np.maximum(1.0 + q - anchor, 0.0) ** cfg.gamma
        per_pixel = np.where(mask == 1.0, mod * ce, ce)
    return LossResult(value=float(per_pixel.sum()), per_class=per_pixel, anchor_used=anchor)


def pose_anchor_loss_gradient(
    target,
    prediction,
    cfg: PoseLossConfig = PoseLossConfig(),
    anchor: Optional[float] = None,
) -> np.ndarray:
    """``dL/dq`` per pixel with the anchor held constant."""
    p, q, mask, anchor = _pose_terms(target, prediction, cfg, anchor)
    ce_grad = -p / q + (1.0 - p) / (1.0 - q)
    if anchor is None or cfg.gamma == 0:
        return ce_grad
    g = cfg.gamma
    m = np.maximum(1.0 + q - anchor, 0.0)
    # Masked pixels have p == 0, so the loss there is -m^g log(1 - q).
    bg = -g * m ** (g - 1.0) * np.log1p(-q) + m**g / (1.0 - q)
    return np.where(mask == 1.0, bg, ce_grad)


def pck(pred_points, gt_points, scale: float, alpha: float = 0.5, visible=None) -> float:
    """Fraction of visible keypoints within ``alpha * scale`` (inclusive) of ground truth."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 2)
    if pred.shape != gt.shape:
        raise ValueError("point lists differ in length")
    vis = np.ones(len(gt), bool) if visible is None else np.asarray(visible, bool).reshape(-1)
    if not vis.any():
        return float("nan")
    dist = np.linalg.norm(pred[vis] - gt[vis], axis=1)
    return float(np.mean(dist <= alpha * scale))


def argmax_location(prediction) -> tuple[int, int]:
    """``(x, y)`` of the first maximum in row-major order."""
    prediction = np.asarray(prediction)
    if prediction.size == 0:
        raise ValueError("empty heatmap")
    row, col = np.unravel_index(int(np.argmax(prediction)), prediction.shape)
    return int(col), int(row)


@dataclass
class PeakStats:
    peak_count: int
    is_double: bool
    nearest_peak_correct: bool
    peaks: list


def find_peaks(prediction, min_peak: float = 0.25) -> list[tuple[int, int, float]]:
    """Strict 8-neighbourhood local maxima at or above ``min_peak``, as ``(x, y, value)``."""
    h = np.asarray(prediction, dtype=np.float64)
    padded = np.pad(h, 1, constant_values=-np.inf)
    is_peak = h >= min_peak
    H, W = h.shape
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            neighbour = padded[1 + dr : 1 + dr + H, 1 + dc : 1 + dc + W]
            is_peak &= h > neighbour
    rows, cols = np.nonzero(is_peak)
    return [(int(c), int(r), float(h[r, c])) for r, c in zip(rows, cols)]


def peak_analysis(
    prediction,
    gt: KeypointAnnotation,
    radius: float,
    min_peak: float = 0.25,
) -> PeakStats:
    """Count heatmap peaks and check whether the strongest one is near ground truth."""
    if not 0.0 < min_peak < 1.0:
        raise ValueError("min_peak must lie in (0, 1)")
    peaks = find_peaks(prediction, min_peak)
    correct = False
    if peaks:
        x, y, _ = max(peaks, key=lambda pk: pk[2])
        correct = bool(np.hypot(x - gt.x, y - gt.y) <= radius)
    return PeakStats(len(peaks), len(peaks) >= 2, correct, peaks)


def write_heatmap_csv(values, path) -> None:
    """Write ``H,W`` on the first line, then one line of ``W`` values per row."""
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(values.shape)
        for row in values:
            writer.writerow([repr(float(v)) for v in row])


def read_heatmap_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty heatmap file")
    H, W = (int(v) for v in rows[0])
    values = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    if values.shape != (H, W):
        raise ValueError(f"{Path(path).name}: header says {H}x{W}, body is {values.shape}")
    return values


def pose_anchor_loss_batch(
    targets,
    predictions,
    cfg: PoseLossConfig = PoseLossConfig(),
    visible=None,
    anchors=None,
):
    """Vectorised pose loss over ``(..., H, W)`` stacks of heatmaps.

    Each heatmap gets its own anchor. Heatmaps without an anchor candidate
    fall back to BCE; heatmaps flagged invisible contribute nothing.
    ``anchors`` (NaN for "no anchor") replaces the anchors read from
    ``predictions``.

    Returns:
        ``(loss, grad, anchors)``: per-heatmap losses of shape ``(...)``,
        ``dL/dq`` of the input shape and the anchors used (NaN where absent).
    """
    p = np.asarray(targets, dtype=np.float64)
    if p.shape != np.shape(predictions):
        raise ValueError(f"dimension mismatch: {p.shape} vs {np.shape(predictions)}")
    q = clamp_probability(predictions, cfg.floor)
    if anchors is None:
        cand = np.where(p > cfg.anchor_threshold, q, -np.inf)
        anchors = cand.max(axis=(-2, -1))
    anchors = np.asarray(anchors, dtype=np.float64)
    has_anchor = np.isfinite(anchors)
    anchors = np.where(has_anchor, anchors, np.nan)

    log_q, log_1q = np.log(q), np.log1p(-q)
    ce = -(p * log_q + (1.0 - p) * log_1q)
    ce_grad = -p / q + (1.0 - p) / (1.0 - q)
    modulated = (p == 0.0) & has_anchor[..., None, None]
    a = np.where(has_anchor, anchors, 0.0)[..., None, None]
    m = np.maximum(1.0 + q - a, 0.0)
    g = cfg.gamma
    mod = m**g
    per_pixel = np.where(modulated, mod * ce, ce)
    if g:
        bg_grad = -g * m ** (g - 1.0) * log_1q + mod / (1.0 - q)
    else:
        bg_grad = ce_grad
    grad = np.where(modulated, bg_grad, ce_grad)
    if visible is not None:
        keep = np.asarray(visible, dtype=np.float64)[..., None, None]
        per_pixel = per_pixel * keep
        grad = grad * keep
    return per_pixel.sum(axis=(-2, -1)), grad, anchors
