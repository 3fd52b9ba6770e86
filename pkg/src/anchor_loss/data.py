"""Synthetic datasets and small-image binary formats."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .heatmap import KeypointAnnotation
from .numerics import seeded_rng

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
IDX_UBYTE = 0x08


class ParseError(ValueError):
    """Malformed binary input; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class ClassificationDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")

    def __len__(self):
        return len(self.labels)

    @property
    def onehot(self) -> np.ndarray:
        return np.eye(self.num_classes)[self.labels]

    def subset(self, idx, split: str | None = None) -> "ClassificationDataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx], split=split or self.split)


@dataclass
class PoseDataset:
    """Grayscale images with per-image keypoints.

    ``keypoints`` has shape ``(N, K, 2)`` holding ``(x, y)``; ``visible`` is
    ``(N, K)``.
    """

    images: np.ndarray
    keypoints: np.ndarray
    visible: np.ndarray
    sigma: float = 1.0
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        N, H, W = self.images.shape
        if self.keypoints.shape[:1] != (N,) or self.visible.shape != self.keypoints.shape[:2]:
            raise ValueError("annotation arrays do not match the image count")
        x, y = self.keypoints[..., 0], self.keypoints[..., 1]
        inside = (x >= 0) & (x < W) & (y >= 0) & (y < H)
        if np.any(self.visible & ~inside):
            raise ValueError("visible keypoint outside the image")

    def __len__(self):
        return len(self.images)

    @property
    def num_keypoints(self) -> int:
        return self.keypoints.shape[1]

    def annotation(self, i: int, k: int) -> KeypointAnnotation:
        x, y = self.keypoints[i, k]
        return KeypointAnnotation(float(x), float(y), bool(self.visible[i, k]), self.sigma)

    def subset(self, idx, split: str | None = None) -> "PoseDataset":
        return replace(
            self,
            images=self.images[idx],
            keypoints=self.keypoints[idx],
            visible=self.visible[idx],
            split=split or self.split,
        )


def gen_confusable_blobs(
    seed: int,
    n_per_class: int = 100,
    pairs: int = 5,
    separation: float = 6.0,
    confusion_overlap: float = 0.0,
    dim: int | None = None,
    noise: float = 1.0,
) -> ClassificationDataset:
    """Gaussian clusters arranged in ``pairs`` near-identical pairs.

    Pair ``j`` sits on its own axis at radius ``3 * separation / sqrt(2)``;
    its two members are split along a shared last axis by
    ``(1 - confusion_overlap) * separation``. Members of different pairs are
    therefore at least ``3 * separation`` apart. Classes ``2j`` and ``2j+1``
    form pair ``j``.
    """
    if separation <= 0 or not 0.0 <= confusion_overlap < 1.0:
        raise ValueError("need separation > 0 and confusion_overlap in [0, 1)")
    if n_per_class < 1 or pairs < 1 or noise <= 0:
        raise ValueError("n_per_class, pairs and noise must be positive")
    min_dim = pairs + 1
    dim = min_dim if dim is None else dim
    if dim < min_dim:
        raise ValueError(f"dim must be at least pairs + 1 = {min_dim}")

    radius = 3.0 * separation / math.sqrt(2.0)
    half_gap = 0.5 * (1.0 - confusion_overlap) * separation
    centers = np.zeros((2 * pairs, dim))
    for j in range(pairs):
        centers[2 * j, j] = centers[2 * j + 1, j] = radius
        centers[2 * j, pairs] = -half_gap
        centers[2 * j + 1, pairs] = half_gap

    rng = seeded_rng(seed)
    labels = np.repeat(np.arange(2 * pairs), n_per_class)
    features = centers[labels] + noise * rng.standard_normal((len(labels), dim))
    order = rng.permutation(len(labels))
    meta = dict(
        generator="confusable_blobs",
        seed=int(seed),
        n_per_class=n_per_class,
        pairs=pairs,
        separation=separation,
        confusion_overlap=confusion_overlap,
        dim=dim,
        noise=noise,
        centers=centers.tolist(),
    )
    return ClassificationDataset(features[order], labels[order], 2 * pairs, meta=meta)


def render_blob(height: int, width: int, x: float, y: float, sigma: float) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width]
    return np.exp(-((cols - x) ** 2 + (rows - y) ** 2) / (2.0 * sigma**2))


def gen_symmetric_keypoints(
    seed: int,
    n: int = 200,
    height: int = 32,
    width: int = 32,
    pair_distance: float = 12.0,
    sigma: float = 1.5,
    max_tilt: float = math.pi / 8,
    heatmap_sigma: float = 1.0,
    max_retries: int = 100,
) -> PoseDataset:
    """Images holding two identical gaussian bumps.

    Keypoint 0 is the left bump and keypoint 1 the right one, so the two
    parts can only be told apart by their relative position. Each image gets
    a random centre and a tilt in ``[-max_tilt, max_tilt]``; a draw that
    would put a bump within ``3 * sigma`` of the border is redrawn.
    """
    if pair_distance < 4 * sigma:
        raise ValueError("pair_distance must be at least 4 * sigma")
    rng = seeded_rng(seed)
    margin = 3.0 * sigma
    images = np.empty((n, height, width))
    keypoints = np.empty((n, 2, 2))
    for i in range(n):
        for _ in range(max_retries):
            cx = rng.uniform(0, width)
            cy = rng.uniform(0, height)
            tilt = rng.uniform(-max_tilt, max_tilt)
            dx = 0.5 * pair_distance * math.cos(tilt)
            dy = 0.5 * pair_distance * math.sin(tilt)
            pts = np.array([[cx - dx, cy - dy], [cx + dx, cy + dy]])
            if np.all(pts >= margin) and np.all(pts[:, 0] <= width - 1 - margin) and np.all(pts[:, 1] <= height - 1 - margin):
                break
        else:
            raise ValueError(f"could not place a non-clipped pair after {max_retries} draws")
        keypoints[i] = pts
        images[i] = np.maximum(
            render_blob(height, width, *pts[0], sigma),
            render_blob(height, width, *pts[1], sigma),
        )
    meta = dict(
        generator="symmetric_keypoints",
        seed=int(seed),
        n=n,
        height=height,
        width=width,
        pair_distance=pair_distance,
        sigma=sigma,
        max_tilt=max_tilt,
        heatmap_sigma=heatmap_sigma,
    )
    return PoseDataset(images, keypoints, np.ones((n, 2), bool), sigma=heatmap_sigma, meta=meta)


def hflip_pose(dataset: PoseDataset, swap=((0, 1),)) -> PoseDataset:
    """Mirror images left-right and swap the left/right keypoint indices."""
    W = dataset.images.shape[2]
    kp = dataset.keypoints.copy()
    kp[..., 0] = W - 1 - kp[..., 0]
    vis = dataset.visible.copy()
    for a, b in swap:
        kp[:, [a, b]] = kp[:, [b, a]]
        vis[:, [a, b]] = vis[:, [b, a]]
    return replace(dataset, images=dataset.images[:, :, ::-1].copy(), keypoints=kp, visible=vis)


def split(dataset, val_fraction: float, seed: int):
    """Seeded disjoint train/validation split."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    n = len(dataset)
    n_val = int(round(n * val_fraction))
    if n_val == 0 or n_val == n:
        raise ValueError(f"split of {n} samples at {val_fraction} leaves an empty side")
    order = seeded_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[n_val:]), "train"), dataset.subset(np.sort(order[:n_val]), "val")


# -- CIFAR-10 binary -----------------------------------------------------------------


def parse_cifar10_bytes(raw: bytes, num_classes: int = 10) -> ClassificationDataset:
    """Parse CIFAR-10 binary records (1 label byte + 3072 channel-major pixels)."""
    if len(raw) % CIFAR_RECORD:
        whole = len(raw) // CIFAR_RECORD * CIFAR_RECORD
        raise ParseError(f"truncated record: {len(raw)} bytes is not a multiple of {CIFAR_RECORD}", whole)
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = arr[:, 0]
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        raise ParseError(f"label byte {labels[bad[0]]} exceeds {num_classes - 1}", int(bad[0]) * CIFAR_RECORD)
    features = arr[:, 1:].astype(np.float64) / 255.0
    return ClassificationDataset(features, labels.astype(np.int64), num_classes, meta={"format": "cifar10"})


def parse_cifar10_binary(path) -> ClassificationDataset:
    return parse_cifar10_bytes(Path(path).read_bytes())


def cifar10_to_bytes(dataset: ClassificationDataset) -> bytes:
    pixels = np.rint(dataset.features * 255.0)
    if pixels.shape[1:] != (CIFAR_PIXELS,) or pixels.min() < 0 or pixels.max() > 255:
        raise ValueError("features are not 3072 values in [0, 1]")
    out = np.empty((len(dataset), CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = dataset.labels
    out[:, 1:] = pixels.astype(np.uint8)
    return out.tobytes()


def write_cifar10_binary(dataset: ClassificationDataset, path) -> None:
    Path(path).write_bytes(cifar10_to_bytes(dataset))


def standardize(dataset: ClassificationDataset, mean=None, std=None):
    """Per-feature standardisation; returns the dataset and the statistics used."""
    mean = dataset.features.mean(axis=0) if mean is None else mean
    std = dataset.features.std(axis=0) if std is None else std
    std = np.where(std > 0, std, 1.0)
    return replace(dataset, features=(dataset.features - mean) / std), mean, std


# -- IDX -------------------------------------------------------------------------------


def parse_idx_bytes(raw: bytes) -> np.ndarray:
    if len(raw) < 4:
        raise ParseError("missing magic number", 0)
    if raw[0] != 0 or raw[1] != 0:
        raise ParseError(f"bad magic 0x{raw[:4].hex()}: high bytes must be zero", 0)
    if raw[2] != IDX_UBYTE:
        raise ParseError(f"unsupported type byte 0x{raw[2]:02x}", 2)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"header needs {header} bytes, file has {len(raw)}", len(raw))
    dims = tuple(int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim))
    expected = math.prod(dims)
    actual = len(raw) - header
    if actual != expected:
        raise ParseError(f"payload length mismatch: expected {expected} bytes, got {actual}", header)
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims).copy()


def parse_idx(path) -> np.ndarray:
    return parse_idx_bytes(Path(path).read_bytes())


def idx_to_bytes(array) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX payloads are supported")
    header = bytes([0, 0, IDX_UBYTE, array.ndim])
    header += b"".join(int(d).to_bytes(4, "big") for d in array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def write_idx(array, path) -> None:
    Path(path).write_bytes(idx_to_bytes(array))


# -- generated dataset container ----------------------------------------------------


def save_dataset(dataset, path) -> None:
    """Write ``<path>.npz`` plus a ``<path>.json`` sidecar of generation parameters."""
    path = Path(path)
    if isinstance(dataset, ClassificationDataset):
        arrays = dict(features=dataset.features, labels=dataset.labels)
        kind = "classification"
        extra = {"num_classes": dataset.num_classes}
    else:
        arrays = dict(images=dataset.images, keypoints=dataset.keypoints, visible=dataset.visible)
        kind = "pose"
        extra = {"sigma": dataset.sigma}
    np.savez(path.with_suffix(".npz"), **arrays)
    sidecar = {"kind": kind, "split": dataset.split, **extra, "params": dataset.meta}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_dataset(path):
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    with np.load(path.with_suffix(".npz")) as z:
        if sidecar["kind"] == "classification":
            return ClassificationDataset(z["features"], z["labels"], sidecar["num_classes"], sidecar["split"], sidecar["params"])
        return PoseDataset(z["images"], z["keypoints"], z["visible"], sidecar["sigma"], sidecar["split"], sidecar["params"])
