"""Probability-anchored cross-entropy losses with analytic gradients.

The loss family rescales binary cross entropy by how a prediction compares
with an anchor probability, so easy negatives are down-weighted and
confusing ones up-weighted. The package also carries heatmap variants for
keypoint localisation, a small numpy training harness and a verifier for the
identities the losses must satisfy.
"""

from .heatmap import KeypointAnnotation, PoseLossConfig, encode_gaussian, pose_anchor_loss, pose_anchor_loss_gradient
from .losses import (
    AnchorLossConfig,
    AnchorMode,
    Anchors,
    LossResult,
    anchor_loss,
    anchor_loss_gradient,
    anchor_probabilities,
    bce,
    bce_gradient,
    focal_loss,
    focal_loss_gradient,
    softmax_ce,
    softmax_ce_gradient,
)
from .numerics import EPS

__version__ = "0.1.0"

__all__ = [
    "EPS",
    "AnchorLossConfig",
    "AnchorMode",
    "Anchors",
    "KeypointAnnotation",
    "LossResult",
    "PoseLossConfig",
    "anchor_loss",
    "anchor_loss_gradient",
    "anchor_probabilities",
    "bce",
    "bce_gradient",
    "encode_gaussian",
    "focal_loss",
    "focal_loss_gradient",
    "pose_anchor_loss",
    "pose_anchor_loss_gradient",
    "softmax_ce",
    "softmax_ce_gradient",
]
