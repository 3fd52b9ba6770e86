"""Cross-entropy family and the anchor loss, with closed-form gradients.

Every loss here works on a single sample of shape ``(K,)`` or a batch of
shape ``(N, K)``; per-class contributions are always kept so callers can
reweight them. Probabilities are clamped to ``[floor, 1 - floor]`` before
any logarithm and the clamped value is used throughout, modulators included.

Anchors are plain numbers. When a dynamic anchor is read off the prediction
it is treated as a constant by the gradient functions, so no gradient flows
through it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numerics import EPS, clamp_probability, log_softmax, softmax

__all__ = [
    "AnchorMode",
    "AnchorLossConfig",
    "Anchors",
    "LossResult",
    "bce",
    "bce_gradient",
    "softmax_ce",
    "softmax_ce_gradient",
    "focal_loss",
    "focal_loss_gradient",
    "anchor_probabilities",
    "anchor_loss",
    "anchor_loss_gradient",
    "batch_reduce",
]


class AnchorMode(str, enum.Enum):
    STATIC = "static"
    DYNAMIC_TARGET = "dynamic_target"
    DYNAMIC_MAX_BACKGROUND = "dynamic_max_background"
    DYNAMIC_BOTH = "dynamic_both"
    FOCAL_EQUIVALENT = "focal_equivalent"


@dataclass(frozen=True)
class AnchorLossConfig:
    """Hyperparameters of the anchor loss.

    ``static_anchor`` is only read in ``STATIC`` mode. ``margin`` only shifts
    the background anchor in the dynamic modes that use the target score.
    """

    gamma_target: float = 0.0
    gamma_background: float = 0.5
    margin: float = 0.05
    anchor_mode: AnchorMode = AnchorMode.DYNAMIC_TARGET
    static_anchor: float = 0.5
    floor: float = EPS

    def __post_init__(self):
        object.__setattr__(self, "anchor_mode", AnchorMode(self.anchor_mode))
        if self.gamma_target < 0 or self.gamma_background < 0:
            raise ValueError("gamma must be non-negative")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if not 0.0 <= self.static_anchor <= 1.0:
            raise ValueError("static anchor must lie in [0, 1]")
        if not 0.0 < self.floor < 0.5:
            raise ValueError("floor must lie in (0, 0.5)")


@dataclass(frozen=True)
class Anchors:
    """Anchor probabilities for the target and background terms.

    ``None`` means the term is not modulated (its modulator is 1). Batched
    anchors are arrays of shape ``(N, 1)`` so they broadcast over classes.
    """

    q_pos: Optional[np.ndarray | float] = None
    q_neg: Optional[np.ndarray | float] = None


@dataclass
class LossResult:
    value: float | np.ndarray
    per_class: np.ndarray
    anchor_used: Anchors | float | None = field(default=None)


def _prepare(p, q, floor):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: labels {p.shape} vs predictions {q.shape}")
    if p.ndim not in (1, 2) or p.shape[-1] == 0:
        raise ValueError("expected a (K,) or (N, K) array with K >= 1")
    return p, clamp_probability(q, floor)


def _result(per_class, anchors=None) -> LossResult:
    value = per_class.sum(axis=-1)
    if value.ndim == 0:
        value = float(value)
    return LossResult(value=value, per_class=per_class, anchor_used=anchors)


def bce(p, q, floor: float = EPS) -> LossResult:
    """Binary cross entropy summed over classes."""
    p, q = _prepare(p, q, floor)
    per_class = -(p * np.log(q) + (1.0 - p) * np.log1p(-q))
    return _result(per_class)


def bce_gradient(p, q, floor: float = EPS) -> np.ndarray:
    p, q = _prepare(p, q, floor)
    return -p / q + (1.0 - p) / (1.0 - q)


def _target_index(p):
    p = np.asarray(p)
    ones = p == 1.0
    if not np.all(ones | (p == 0.0)) or not np.all(ones.sum(axis=-1) == 1):
        raise ValueError("label must be one-hot")
    return np.argmax(p, axis=-1)


def softmax_ce(p, logits) -> LossResult:
    """Softmax cross entropy ``-log softmax(logits)[t]`` for one-hot ``p``.

    ``per_class`` holds ``-p_k log s_k``, so only the target entry is nonzero.
    """
    p = np.asarray(p, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if p.shape != logits.shape:
        raise ValueError(f"length mismatch: labels {p.shape} vs logits {logits.shape}")
    _target_index(p)
    per_class = -p * log_softmax(logits)
    return _result(per_class)


def softmax_ce_gradient(p, logits) -> np.ndarray:
    """Gradient of :func:`softmax_ce` with respect to the logits."""
    p = np.asarray(p, dtype=np.float64)
    _target_index(p)
    return softmax(logits) - p


def focal_loss(p, q, gamma: float, floor: float = EPS) -> LossResult:
    """Sigmoid focal loss, ``-[p(1-q)^g log q + (1-p) q^g log(1-q)]`` per class."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    p, q = _prepare(p, q, floor)
    per_class = -(
        p * (1.0 - q) ** gamma * np.log(q)
        + (1.0 - p) * q**gamma * np.log1p(-q)
    )
    return _result(per_class)


def focal_loss_gradient(p, q, gamma: float, floor: float = EPS) -> np.ndarray:
    p, q = _prepare(p, q, floor)
    g_pos = gamma * (1.0 - q) ** (gamma - 1.0) * np.log(q) - (1.0 - q) ** gamma / q
    g_neg = -gamma * q ** (gamma - 1.0) * np.log1p(-q) + q**gamma / (1.0 - q)
    return p * g_pos + (1.0 - p) * g_neg


def _batched_anchors(p, q, cfg: AnchorLossConfig) -> Anchors:
    """Anchors as ``(..., 1)`` arrays (or scalars / None), computed from clamped q."""
    mode = cfg.anchor_mode
    if mode is AnchorMode.STATIC:
        return Anchors(cfg.static_anchor, cfg.static_anchor)
    if mode is AnchorMode.FOCAL_EQUIVALENT:
        # q* = 1 - p: 0 on the target term, 1 on the background term.
        return Anchors(0.0, 1.0)

    q_pos = q_neg = None
    if mode in (AnchorMode.DYNAMIC_TARGET, AnchorMode.DYNAMIC_BOTH):
        t = _target_index(p)
        q_t = np.take_along_axis(q, np.expand_dims(t, -1), axis=-1)
        q_neg = q_t - cfg.margin
    if mode in (AnchorMode.DYNAMIC_MAX_BACKGROUND, AnchorMode.DYNAMIC_BOTH):
        if p.shape[-1] < 2:
            raise ValueError("no background class")
        background = np.where(p == 0.0, q, -np.inf)
        if np.any(np.all(np.isinf(background), axis=-1)):
            raise ValueError("no background class")
        # np.max is order independent; ties are equal values so the lowest
        # index is as good as any.
        q_pos = np.max(background, axis=-1, keepdims=True)
    return Anchors(q_pos, q_neg)


def anchor_probabilities(p, q, cfg: AnchorLossConfig) -> Anchors:
    """Anchor probabilities for one sample (scalars) or a batch (``(N, 1)``).

    Returns:
        :class:`Anchors` with ``q_pos`` for the target term and ``q_neg``
        for the background term. A ``None`` entry is not used by the mode.
    """
    p, q = _prepare(p, q, cfg.floor)
    anchors = _batched_anchors(p, q, cfg)
    if p.ndim == 1:
        return Anchors(*(None if a is None else float(np.squeeze(a)) for a in (anchors.q_pos, anchors.q_neg)))
    return anchors


def _modulators(q, anchors: Anchors, cfg: AnchorLossConfig):
    # Bases are non-negative for anchors in [0, 1 + margin]; clamp anyway.
    base_t = None if anchors.q_pos is None else np.maximum(1.0 - q + anchors.q_pos, 0.0)
    base_b = None if anchors.q_neg is None else np.maximum(1.0 + q - anchors.q_neg, 0.0)
    return base_t, base_b


def _resolve(p, q, cfg, anchors):
    p, q = _prepare(p, q, cfg.floor)
    if anchors is None:
        anchors = _batched_anchors(p, q, cfg)
    return p, q, anchors


def anchor_loss(p, q, cfg: AnchorLossConfig, anchors: Anchors | None = None) -> LossResult:
    """Anchor loss with independent target and background modulators.

    Per class ``k``::

        -(1 - q_k + q_pos)^gamma_t * p_k * log(q_k)
        -(1 + q_k - q_neg)^gamma_b * (1 - p_k) * log(1 - q_k)

    Args:
        p: Labels in {0, 1}, shape ``(K,)`` or ``(N, K)``.
        q: Predicted probabilities, same shape.
        cfg: Loss hyperparameters and anchor mode.
        anchors: Pre-computed anchors. Pass these to freeze the anchors at
            values taken from another prediction (e.g. when probing with
            finite differences).
    """
    p, q, anchors = _resolve(p, q, cfg, anchors)
    base_t, base_b = _modulators(q, anchors, cfg)
    mod_t = 1.0 if base_t is None else base_t**cfg.gamma_target
    mod_b = 1.0 if base_b is None else base_b**cfg.gamma_background
    per_class = -(mod_t * p * np.log(q) + mod_b * (1.0 - p) * np.log1p(-q))
    return _result(per_class, anchors)


def anchor_loss_gradient(p, q, cfg: AnchorLossConfig, anchors: Anchors | None = None) -> np.ndarray:
    """Closed-form ``dL/dq`` of :func:`anchor_loss` with anchors held constant.

    Background term, modulator base ``m = 1 + q - q_neg``::

        -m^(g_b - 1) * [g_b * log(1 - q) - m / (1 - q)]

    Target term, ``m = 1 - q + q_pos``::

        m^(g_t - 1) * [g_t * log(q) - m / q]
    """
    p, q, anchors = _resolve(p, q, cfg, anchors)
    base_t, base_b = _modulators(q, anchors, cfg)

    if base_t is None:
        g_t = -1.0 / q
    else:
        gt = cfg.gamma_target
        g_t = gt * base_t ** (gt - 1.0) * np.log(q) - base_t**gt / q if gt else -1.0 / q
    if base_b is None:
        g_b = 1.0 / (1.0 - q)
    else:
        gb = cfg.gamma_background
        if gb:
            g_b = -gb * base_b ** (gb - 1.0) * np.log1p(-q) + base_b**gb / (1.0 - q)
        else:
            g_b = 1.0 / (1.0 - q)
    return p * g_t + (1.0 - p) * g_b


def batch_reduce(losses: Sequence[LossResult] | LossResult) -> float:
    """Mean of per-sample loss values (losses are summed over classes first)."""
    if isinstance(losses, LossResult):
        values = np.atleast_1d(np.asarray(losses.value, dtype=np.float64))
    else:
        values = np.asarray([np.asarray(r.value, dtype=np.float64) for r in losses]).reshape(-1)
    if values.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(values))
