"""Small numpy models with hand-written backprop, SGD and OHEM selection."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .losses import LossResult
from .numerics import sigmoid, softmax

HEADS = ("sigmoid", "softmax")


class StaleCacheError(RuntimeError):
    pass


@dataclass
class Cache:
    version: int
    owner: int
    inputs: tuple
    logits: np.ndarray
    probs: np.ndarray
    head: str


def _uniform_init(rng, fan_in, shape, gain: float = 1.0):
    bound = gain / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _head(logits, head):
    if head == "sigmoid":
        return sigmoid(logits)
    if head == "softmax":
        return softmax(logits, axis=1)
    raise ValueError(f"unknown head {head!r}")


def _head_backward(probs, grad_probs, head):
    if head == "sigmoid":
        return grad_probs * probs * (1.0 - probs)
    # softmax Jacobian-vector product along the class axis
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=1, keepdims=True))


class _Model:
    """Shared parameter bookkeeping. Subclasses implement ``_forward``/``_backward``."""

    head = "sigmoid"

    def __init__(self):
        self.version = 0

    def params(self) -> list[np.ndarray]:
        raise NotImplementedError

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        current = self.params()
        if len(params) != len(current):
            raise ValueError("parameter count mismatch")
        for old, new in zip(current, params):
            if old.shape != np.shape(new):
                raise ValueError(f"parameter shape mismatch: {old.shape} vs {np.shape(new)}")
            old[...] = new
        self.version += 1

    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p, dtype=np.float64).tobytes())
        return h.hexdigest()

    def forward(self, x, head: str | None = None):
        """Probabilities after the head activation, plus the backward cache.

        ``head`` overrides the model's default head (softmax for CE warmup on
        a sigmoid model, for example).
        """
        head = head or self.head
        logits, inner = self._forward(np.asarray(x, dtype=np.float64))
        probs = _head(logits, head)
        return probs, Cache(self.version, id(self), inner, logits, probs, head)

    def backward(self, cache: Cache, grad, wrt: str = "probs") -> list[np.ndarray]:
        """Parameter gradients given ``dL/dq`` (or ``dL/dz`` with ``wrt='logits'``)."""
        if cache.owner != id(self) or cache.version != self.version:
            raise StaleCacheError("cache was produced by a different parameter state")
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != cache.logits.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match output {cache.logits.shape}")
        if wrt == "probs":
            grad = _head_backward(cache.probs, grad, cache.head)
        elif wrt != "logits":
            raise ValueError("wrt must be 'probs' or 'logits'")
        return self._backward(cache.inputs, grad)


class DenseModel(_Model):
    """Fully connected network; ``layers`` holds ``(weight, bias, activation)``."""

    def __init__(self, layers, head: str = "sigmoid"):
        super().__init__()
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.layers = [(np.asarray(w, np.float64), np.asarray(b, np.float64), act) for w, b, act in layers]
        for (w, b, act), nxt in zip(self.layers, self.layers[1:] + [None]):
            if b.shape != (w.shape[0],) or act not in ("relu", "identity"):
                raise ValueError("malformed layer")
            if nxt is not None and nxt[0].shape[1] != w.shape[0]:
                raise ValueError("layer dimensions do not chain")
        self.head = head

    @classmethod
    def init(cls, sizes: Sequence[int], rng, head: str = "sigmoid", activation: str = "relu"):
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = "identity" if i == len(sizes) - 2 else activation
            layers.append((_uniform_init(rng, n_in, (n_out, n_in)), np.zeros(n_out), act))
        return cls(layers, head)

    def params(self):
        return [a for w, b, _ in self.layers for a in (w, b)]

    def _forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.layers[0][0].shape[1]:
            raise ValueError(f"input of shape {x.shape} does not match {self.layers[0][0].shape[1]} features")
        acts = [x]
        pre = []
        for w, b, act in self.layers:
            z = acts[-1] @ w.T + b
            pre.append(z)
            acts.append(np.maximum(z, 0.0) if act == "relu" else z)
        return acts[-1], (acts, pre)

    def _backward(self, inner, dz):
        acts, pre = inner
        grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            w, _, act = self.layers[i]
            if act == "relu":
                dz = dz * (pre[i] > 0)
            grads.append(dz.sum(axis=0))
            grads.append(dz.T @ acts[i])
            dz = dz @ w
        return grads[::-1]


# -- convolutional encoder/decoder -------------------------------------------------------


def conv2d(x, w, b):
    """'Same' 3x3-style convolution (cross-correlation), stride 1. Returns output and im2col matrix."""
    N, C, H, W = x.shape
    O, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H, W, k, k
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, C * k * k)
    out = cols @ w.reshape(O, -1).T + b
    return out.reshape(N, H, W, O).transpose(0, 3, 1, 2), cols


def conv2d_backward(dout, cols, x_shape, w):
    N, C, H, W = x_shape
    O, _, k, _ = w.shape
    pad = k // 2
    dmat = dout.transpose(0, 2, 3, 1).reshape(N * H * W, O)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ w.reshape(O, -1)).reshape(N, H, W, C, k, k)
    dxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + H, j : j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad : pad + H, pad : pad + W], dw, db


def avg_pool2(x):
    N, C, H, W = x.shape
    return x.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))


def avg_pool2_backward(dout):
    return np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25


def upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_backward(dout):
    N, C, H, W = dout.shape
    return dout.reshape(N, C, H // 2, 2, W // 2, 2).sum(axis=(3, 5))


class ConvHeatmapModel(_Model):
    """Hourglass-shaped conv net mapping ``(N, H, W)`` images to ``(N, K, H, W)`` heatmaps.

    Encoder: 3x3 conv + ReLU at full resolution, then for each further entry
    of ``channels`` a 2x average pool followed by conv + ReLU. The
    bottleneck adds ``bottleneck_convs`` extra convs at the lowest
    resolution. The decoder mirrors the encoder with nearest-neighbour
    upsampling, adds the encoder features of the same resolution (skip
    connection), and ends in a linear 3x3 conv to ``num_keypoints`` logits.
    """

    head = "sigmoid"

    def __init__(
        self,
        num_keypoints: int,
        channels: Sequence[int] = (8, 16, 16),
        bottleneck_convs: int = 1,
        rng=None,
        in_channels: int = 1,
        kernel: int = 3,
        head_bias: float = 0.0,
        skips: bool = True,
        init_gain: float = math.sqrt(6.0),
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.num_keypoints = num_keypoints
        self.channels = tuple(channels)
        self.skips = skips
        self.levels = len(self.channels) - 1

        def conv(cin, cout):
            w = _uniform_init(rng, cin * kernel * kernel, (cout, cin, kernel, kernel), init_gain)
            return [w, np.zeros(cout)]

        ch = self.channels
        self.enc = [conv(in_channels, ch[0])] + [conv(ch[i], ch[i + 1]) for i in range(self.levels)]
        self.mid = [conv(ch[-1], ch[-1]) for _ in range(bottleneck_convs)]
        self.dec = [conv(ch[i + 1], ch[i]) for i in reversed(range(self.levels))]
        self.out = conv(ch[0], num_keypoints)
        self.out[1][:] = head_bias

    def params(self):
        return [a for layer in self.enc + self.mid + self.dec + [self.out] for a in layer]

    def _forward(self, x):
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4:
            raise ValueError(f"expected (N, H, W) or (N, C, H, W) images, got {x.shape}")
        scale = 2**self.levels
        if x.shape[2] % scale or x.shape[3] % scale:
            raise ValueError(f"image size must be divisible by {scale}")
        tape = []  # (kind, payload) in execution order
        skip_feats = []
        h = x
        for i, (w, b) in enumerate(self.enc):
            if i:
                tape.append(("pool", None))
                h = avg_pool2(h)
            z, cols = conv2d(h, w, b)
            tape.append(("conv", (cols, h.shape, w, z)))
            h = np.maximum(z, 0.0)
            skip_feats.append(h)
        for w, b in self.mid:
            z, cols = conv2d(h, w, b)
            tape.append(("conv", (cols, h.shape, w, z)))
            h = np.maximum(z, 0.0)
        for lvl, (w, b) in zip(reversed(range(self.levels)), self.dec):
            tape.append(("up", None))
            h = upsample2(h)
            z, cols = conv2d(h, w, b)
            tape.append(("conv", (cols, h.shape, w, z)))
            h = np.maximum(z, 0.0)
            if self.skips:
                tape.append(("skip", lvl))
                h = h + skip_feats[lvl]
        w, b = self.out
        z, cols = conv2d(h, w, b)
        tape.append(("head", (cols, h.shape, w)))
        return z, (tape, len(self.enc))

    def _backward(self, inner, dz):
        tape, _ = inner
        conv_grads = []
        skip_grads = {}
        # ReLU outputs of the encoder are where skip gradients re-enter.
        enc_relu_index = {}
        n_conv = 0
        for pos, (kind, payload) in enumerate(tape):
            if kind == "conv":
                if n_conv < len(self.enc):
                    enc_relu_index[pos] = n_conv
                n_conv += 1
        d = dz
        for pos in range(len(tape) - 1, -1, -1):
            kind, payload = tape[pos]
            if kind == "head":
                cols, shape, w = payload
                d, dw, db = conv2d_backward(d, cols, shape, w)
                conv_grads.append((dw, db))
            elif kind == "skip":
                skip_grads[payload] = d
            elif kind == "conv":
                cols, shape, w, z = payload
                lvl = enc_relu_index.get(pos)
                if lvl is not None and lvl in skip_grads:
                    d = d + skip_grads.pop(lvl)
                d = d * (z > 0)
                d, dw, db = conv2d_backward(d, cols, shape, w)
                conv_grads.append((dw, db))
            elif kind == "up":
                d = upsample2_backward(d)
            elif kind == "pool":
                d = avg_pool2_backward(d)
        return [g for pair in reversed(conv_grads) for g in pair]


# -- optimisation ---------------------------------------------------------------------------


def sgd_step(params, grads, lr: float, momentum: float, velocity=None):
    """Momentum SGD: ``v <- m v - lr g``; ``p <- p + v``.

    Returns new ``(params, velocity)`` lists; inputs are not modified.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocity):
        if p.shape != np.shape(g) or p.shape != v.shape:
            raise ValueError(f"shape mismatch: {p.shape}, {np.shape(g)}, {v.shape}")
        v = momentum * v - lr * g
        new_v.append(v)
        new_p.append(p + v)
    return new_p, new_v


def ohem_count(n: int, rho: float) -> int:
    # Guard ceil against products like 0.7 * 10 = 7.000000000000001.
    return min(n, max(1, math.ceil(rho * n - 1e-9)))


def ohem_filter(per_sample_losses, rho: float) -> np.ndarray:
    """Sorted indices of the ``ceil(rho * N)`` largest losses; ties go to the lower index."""
    losses = np.asarray(per_sample_losses, dtype=np.float64).reshape(-1)
    if losses.size == 0:
        raise ValueError("empty batch")
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    k = ohem_count(losses.size, rho)
    order = np.argsort(-losses, kind="stable")
    return np.sort(order[:k])


def mse_heatmap_loss(target, prediction) -> LossResult:
    """Sum of squared per-pixel differences."""
    target = np.asarray(target, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if target.shape != prediction.shape:
        raise ValueError(f"dimension mismatch: {target.shape} vs {prediction.shape}")
    per_pixel = (prediction - target) ** 2
    return LossResult(value=float(per_pixel.sum()), per_class=per_pixel)
