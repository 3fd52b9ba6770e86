"""Deterministic mini-batch SGD trainer with CE warmup and OHEM."""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import losses as L
from .data import PoseDataset, hflip_pose
from .heatmap import PoseLossConfig, argmax_location, encode_gaussian, pose_anchor_loss_batch
from .model import ohem_filter, sgd_step
from .numerics import EPS, clamp_probability, seeded_rng

logger = logging.getLogger(__name__)


class LossKind(str, enum.Enum):
    CE = "CE"
    BCE = "BCE"
    FL = "FL"
    AL = "AL"
    AL_POSE = "AL_pose"
    MSE = "MSE"


CLASSIFICATION_KINDS = (LossKind.CE, LossKind.BCE, LossKind.FL, LossKind.AL)
POSE_KINDS = (LossKind.CE, LossKind.BCE, LossKind.FL, LossKind.AL_POSE, LossKind.MSE)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    loss_kind: LossKind = LossKind.AL
    loss_cfg: L.AnchorLossConfig | PoseLossConfig | None = None
    focal_gamma: float = 2.0
    lr: float = 0.1
    lr_schedule: Optional[list] = None
    warmup_epochs: int = 0
    ohem_ratio: Optional[float] = None
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    momentum: float = 0.9
    hflip: bool = False
    pck_alpha: float = 0.5
    pck_scale: Optional[float] = None

    def __post_init__(self):
        self.loss_kind = LossKind(self.loss_kind)
        if self.loss_cfg is None:
            self.loss_cfg = PoseLossConfig() if self.loss_kind is LossKind.AL_POSE else L.AnchorLossConfig()
        if self.lr_schedule is None:
            self.lr_schedule = step_schedule(self.lr, self.epochs)
        self.lr_schedule = [(int(e), float(lr)) for e, lr in self.lr_schedule]
        if any(lr <= 0 for _, lr in self.lr_schedule) or not self.lr_schedule:
            raise ValueError("learning rates must be positive")
        if self.ohem_ratio is not None and not 0.0 < self.ohem_ratio <= 1.0:
            raise ValueError("ohem_ratio must lie in (0, 1]")
        if self.warmup_epochs < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("warmup_epochs, epochs and batch_size must be non-negative / positive")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if epoch >= start:
                lr = value
        return lr

    def snapshot(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "loss_cfg":
                v = {"type": type(v).__name__, **_plain(asdict(v))}
            out[f.name] = _plain(v)
        return out


def _plain(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def step_schedule(lr: float, epochs: int) -> list:
    """Drop by 10x at 80% and again at 90% of the run."""
    return [(0, lr), (int(0.8 * epochs), lr * 0.1), (int(0.9 * epochs), lr * 0.01)] if epochs >= 10 else [(0, lr)]


def loss_for_epoch(epoch: int, config: TrainConfig) -> LossKind:
    """CE during the warmup epochs, the configured loss afterwards."""
    return LossKind.CE if epoch < config.warmup_epochs else config.loss_kind


@dataclass
class EpochRecord:
    epoch: int
    loss_kind: str
    lr: float
    train_loss: float
    train_metric: float
    val_loss: Optional[float] = None
    val_top1: Optional[float] = None
    val_top5: Optional[float] = None
    val_pck: Optional[float] = None


@dataclass
class TrainRun:
    config: dict
    trace: list = field(default_factory=list)
    checksum: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "trace": [asdict(r) for r in self.trace],
            "checksum": self.checksum,
            "extra": self.extra,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainRun":
        d = json.loads(text)
        return cls(d["config"], [EpochRecord(**r) for r in d["trace"]], d["checksum"], d.get("extra", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(EpochRecord)]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for r in self.trace:
            writer.writerow(["" if getattr(r, n) is None else repr(getattr(r, n)) if isinstance(getattr(r, n), float) else getattr(r, n) for n in names])
        return buf.getvalue()


# -- per-sample objectives -------------------------------------------------------------------


def classification_objective(kind: LossKind, config: TrainConfig, probs, logits, onehot):
    """Per-sample losses and the per-sample gradient.

    Returns ``(losses, grad, wrt)`` where ``grad`` is with respect to the
    logits for CE and to the probabilities otherwise.
    """
    if kind is LossKind.CE:
        res = L.softmax_ce(onehot, logits)
        return res.value, L.softmax_ce_gradient(onehot, logits), "logits"
    cfg = config.loss_cfg
    floor = getattr(cfg, "floor", EPS)
    if kind is LossKind.BCE:
        return L.bce(onehot, probs, floor).value, L.bce_gradient(onehot, probs, floor), "probs"
    if kind is LossKind.FL:
        g = config.focal_gamma
        return L.focal_loss(onehot, probs, g, floor).value, L.focal_loss_gradient(onehot, probs, g, floor), "probs"
    if kind is LossKind.AL:
        res = L.anchor_loss(onehot, probs, cfg)
        return res.value, L.anchor_loss_gradient(onehot, probs, cfg, anchors=res.anchor_used), "probs"
    raise ValueError(f"{kind.value} is not a classification loss")


def pose_objective(kind: LossKind, config: TrainConfig, probs, targets, visible):
    """Per-sample losses (summed over keypoints and pixels) and ``dL/dq``.

    Invisible keypoints contribute neither loss nor gradient. During CE
    warmup the pose model trains on plain per-pixel BCE.
    """
    keep = visible.astype(np.float64)[..., None, None]
    cfg = config.loss_cfg
    floor = getattr(cfg, "floor", EPS)
    if kind is LossKind.AL_POSE:
        per_map, grad, _ = pose_anchor_loss_batch(targets, probs, cfg, visible)
        return per_map.sum(axis=1), grad, "probs"
    if kind is LossKind.MSE:
        diff = probs - targets
        return (keep * diff**2).sum(axis=(1, 2, 3)), keep * 2.0 * diff, "probs"
    q = clamp_probability(probs, floor)
    p = targets
    if kind in (LossKind.CE, LossKind.BCE):
        per_px = -(p * np.log(q) + (1.0 - p) * np.log1p(-q))
        grad = -p / q + (1.0 - p) / (1.0 - q)
    elif kind is LossKind.FL:
        g = config.focal_gamma
        per_px = -(p * (1.0 - q) ** g * np.log(q) + (1.0 - p) * q**g * np.log1p(-q))
        grad = p * (g * (1.0 - q) ** (g - 1.0) * np.log(q) - (1.0 - q) ** g / q) + (1.0 - p) * (
            -g * q ** (g - 1.0) * np.log1p(-q) + q**g / (1.0 - q)
        )
    else:
        raise ValueError(f"{kind.value} is not a pose loss")
    return (keep * per_px).sum(axis=(1, 2, 3)), keep * grad, "probs"


def encode_targets(dataset: PoseDataset, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Gaussian target heatmaps ``(N, K, H, W)`` for every annotation."""
    N, H, W = dataset.images.shape
    H, W = height or H, width or W
    out = np.zeros((N, dataset.num_keypoints, H, W))
    for i in range(N):
        for k in range(dataset.num_keypoints):
            out[i, k] = encode_gaussian(dataset.annotation(i, k), H, W).values
    return out


def topk_accuracy(probs, labels, k: int) -> float:
    k = min(k, probs.shape[1])
    # stable sort so ties resolve to the lower class index
    top = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


def predicted_keypoints(heatmaps) -> np.ndarray:
    """Argmax ``(x, y)`` per heatmap for an ``(N, K, H, W)`` stack."""
    N, K = heatmaps.shape[:2]
    out = np.empty((N, K, 2))
    for i in range(N):
        for k in range(K):
            out[i, k] = argmax_location(heatmaps[i, k])
    return out


def pose_pck(heatmaps, dataset: PoseDataset, scale: float, alpha: float) -> float:
    pred = predicted_keypoints(heatmaps)
    vis = dataset.visible
    if not vis.any():
        return float("nan")
    dist = np.linalg.norm(pred - dataset.keypoints, axis=-1)
    return float(np.mean(dist[vis] <= alpha * scale))


def default_pck_scale(dataset: PoseDataset) -> float:
    return float(dataset.meta.get("pair_distance", max(dataset.images.shape[1:])))


# -- training loop ---------------------------------------------------------------------------


class _Task:
    """Binds a dataset to its head choice, objective and metrics."""

    def __init__(self, dataset, config: TrainConfig):
        self.config = config
        self.pose = isinstance(dataset, PoseDataset)
        if self.pose:
            self.targets = encode_targets(dataset)
            self.scale = config.pck_scale or default_pck_scale(dataset)
        self.dataset = dataset

    def inputs(self, idx):
        return self.dataset.images[idx] if self.pose else self.dataset.features[idx]

    def head(self, kind):
        if self.pose:
            return "sigmoid"
        return "softmax" if kind is LossKind.CE else "sigmoid"

    def objective(self, kind, probs, cache, idx):
        if self.pose:
            return pose_objective(kind, self.config, probs, self.targets[idx], self.dataset.visible[idx])
        onehot = np.eye(self.dataset.num_classes)[self.dataset.labels[idx]]
        return classification_objective(kind, self.config, probs, cache.logits, onehot)


def _evaluate(model, task: _Task, kind: LossKind, batch_size: int = 256):
    """Mean loss and metrics over a whole dataset, in fixed-size chunks."""
    n = len(task.dataset)
    losses = []
    outputs = []
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        probs, cache = model.forward(task.inputs(idx), task.head(kind))
        losses.append(task.objective(kind, probs, cache, idx)[0])
        outputs.append(probs)
    loss = float(np.mean(np.concatenate(losses)))
    probs = np.concatenate(outputs)
    if task.pose:
        return loss, {"pck": pose_pck(probs, task.dataset, task.scale, task.config.pck_alpha)}
    labels = task.dataset.labels
    return loss, {"top1": topk_accuracy(probs, labels, 1), "top5": topk_accuracy(probs, labels, 5)}


def _augment(dataset: PoseDataset, rng) -> PoseDataset:
    flip = rng.uniform(size=len(dataset)) < 0.5
    if not flip.any():
        return dataset
    flipped = hflip_pose(dataset.subset(np.nonzero(flip)[0]))
    images = dataset.images.copy()
    kp = dataset.keypoints.copy()
    vis = dataset.visible.copy()
    images[flip], kp[flip], vis[flip] = flipped.images, flipped.keypoints, flipped.visible
    return PoseDataset(images, kp, vis, dataset.sigma, dataset.split, dataset.meta)


def train(model, dataset, config: TrainConfig, val_dataset=None, on_batch=None) -> TrainRun:
    """Train ``model`` in place and return the per-epoch trace.

    The gradient of each batch is the mean of per-sample gradients; with
    OHEM it is the mean over the selected hard samples only. ``on_batch`` is
    an optional hook called with ``(epoch, batch_index, selected_indices,
    batch_size)`` for inspection.

    Raises:
        TrainingDiverged: on a non-finite loss or gradient.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = seeded_rng(config.seed)
    train_task = _Task(dataset, config)
    val_task = _Task(val_dataset, config) if val_dataset is not None else None
    run = TrainRun(config=config.snapshot())
    velocity = None
    n = len(dataset)
    for epoch in range(config.epochs):
        kind = loss_for_epoch(epoch, config)
        lr = config.lr_at(epoch)
        if config.hflip and train_task.pose:
            train_task.dataset = _augment(dataset, rng)
            train_task.targets = encode_targets(train_task.dataset)
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            probs, cache = model.forward(train_task.inputs(idx), train_task.head(kind))
            per_sample, grad, wrt = train_task.objective(kind, probs, cache, idx)
            if not (np.all(np.isfinite(per_sample)) and np.all(np.isfinite(grad))):
                raise TrainingDiverged(epoch)
            weights = np.zeros(len(idx))
            if config.ohem_ratio is None:
                weights[:] = 1.0 / len(idx)
                selected = np.arange(len(idx))
            else:
                selected = ohem_filter(per_sample, config.ohem_ratio)
                weights[selected] = 1.0 / len(selected)
            if on_batch is not None:
                on_batch(epoch, b, selected, len(idx))
            grad = grad * weights.reshape((-1,) + (1,) * (grad.ndim - 1))
            grads = model.backward(cache, grad, wrt)
            params, velocity = sgd_step(model.params(), grads, lr, config.momentum, velocity)
            model.set_params(params)

        train_task.dataset = dataset
        if config.hflip and train_task.pose:
            train_task.targets = encode_targets(dataset)
        train_loss, train_metrics = _evaluate(model, train_task, kind)
        if not math.isfinite(train_loss):
            raise TrainingDiverged(epoch)
        rec = EpochRecord(epoch, kind.value, lr, train_loss, next(iter(train_metrics.values())))
        if val_task is not None:
            rec.val_loss, metrics = _evaluate(model, val_task, kind)
            rec.val_top1 = metrics.get("top1")
            rec.val_top5 = metrics.get("top5")
            rec.val_pck = metrics.get("pck")
        run.trace.append(rec)
        logger.debug("epoch %d %s loss %.5f", epoch, kind.value, train_loss)
    run.checksum = model.checksum()
    return run
