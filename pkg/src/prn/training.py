"""L2 training of the routed network.

Each batch holds pairs of a single difficulty tag and scale, so one update
touches exactly the parameters on that tag's path: mild batches update the
dilated early stage and the deconvolution, moderate batches add the dilated
middle stage, severe batches update the regular stages. Batches of the three
tags are interleaved round-robin within an epoch.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensorops as ops
from .imagepipe import ColorImage, ColorSpace, bicubic_resize, crop_patches, patch_size_for_scale, rgb_to_ycbcr
from .prior import DEFAULT_THRESHOLDS, Difficulty, Thresholds, classify, gradient_prior
from .prnet import PrnModel, backward_train, forward_train, path_layers

__all__ = [
    "TrainConfig",
    "TrainingPair",
    "MixedBatchError",
    "Adam",
    "SGD",
    "make_training_pairs",
    "l2_loss",
    "learning_rate",
    "train_step",
    "train",
    "TrainResult",
    "luminance",
]

log = logging.getLogger(__name__)


class MixedBatchError(ValueError):
    """A batch mixed difficulty tags or scales."""


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-4
    lr_decay_every: int = 300
    lr_decay_factor: float = 10.0
    epochs: int = 1000
    scales: tuple[int, ...] = (3,)
    seed: int = 0
    optimizer: str = "adam"
    thresholds: Thresholds = DEFAULT_THRESHOLDS
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float | None = None
    tag_weights: dict = field(default_factory=lambda: {"mild": 1.0, "moderate": 1.0, "severe": 1.0})

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.scales = tuple(int(s) for s in self.scales)


@dataclass
class TrainingPair:
    lr_patch: np.ndarray
    hr_patch: np.ndarray
    tag: Difficulty
    scale: int
    prior: float = 0.0


def luminance(image) -> np.ndarray:
    """Y plane in [0, 1] of a ColorImage, or the array itself if already 2-D."""
    if isinstance(image, ColorImage):
        ycc = rgb_to_ycbcr(image) if image.space is ColorSpace.RGB else image
        return ycc.plane(0)
    plane = np.asarray(image, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane or ColorImage, got shape {plane.shape}")
    return plane


def make_training_pairs(hr_images, scales=(3,), thresholds: Thresholds = DEFAULT_THRESHOLDS, patch_size=None, seed=0, prior_norm="l1_mean"):
    """Crop HR luminance into patches, bicubic-downscale each, and tag the LR side.

    ``patch_size`` defaults to 54 (56 for x4). Pairs are shuffled with ``seed``.
    """
    hr_images = list(hr_images)
    if not hr_images:
        raise ValueError("make_training_pairs needs at least one image")
    pairs = []
    for image in hr_images:
        plane = luminance(image)
        for scale in scales:
            p = patch_size or patch_size_for_scale(scale)
            if p % scale:
                raise ValueError(f"patch size {p} is not divisible by scale {scale}")
            if min(plane.shape) < p:
                raise ValueError(f"image of shape {plane.shape} is smaller than the {p}px patch")
            _, patches = crop_patches(plane, p)
            for hr in patches:
                hr2 = hr[0, 0]
                lr = bicubic_resize(hr2, p // scale, p // scale)
                prior = gradient_prior(lr, prior_norm=prior_norm)
                pairs.append(
                    TrainingPair(
                        lr[None, None].astype(np.float32),
                        hr.astype(np.float32),
                        classify(prior, thresholds),
                        scale,
                        prior,
                    )
                )
    order = np.random.default_rng(seed).permutation(len(pairs))
    return [pairs[i] for i in order]


def l2_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient ``2 (pred - target) / N``."""
    if pred.shape != target.shape:
        raise ops.DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype, copy=False)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Step schedule: divide by ``lr_decay_factor`` every ``lr_decay_every`` epochs (0-based)."""
    return config.lr * config.lr_decay_factor ** (-(epoch // config.lr_decay_every))


class SGD:
    def __init__(self, config: TrainConfig):
        self.config = config

    def update(self, params: ops.LayerParams, name: str, gw, gb, lr: float) -> None:
        params.weights -= np.float32(lr) * gw.astype(np.float32)
        params.bias -= np.float32(lr) * gb.astype(np.float32)


class Adam:
    """Adam with a per-layer step count (layers are updated at different rates)."""

    def __init__(self, config: TrainConfig):
        self.b1, self.b2 = config.betas
        self.eps = config.eps
        self.state: dict[str, list] = {}

    def update(self, params: ops.LayerParams, name: str, gw, gb, lr: float) -> None:
        if name not in self.state:
            self.state[name] = [0, np.zeros_like(params.weights), np.zeros_like(params.weights),
                                np.zeros_like(params.bias), np.zeros_like(params.bias)]
        st = self.state[name]
        st[0] += 1
        t = st[0]
        scale = lr * math.sqrt(1 - self.b2**t) / (1 - self.b1**t)
        for value, grad, m, v in ((params.weights, gw, st[1], st[2]), (params.bias, gb, st[3], st[4])):
            grad = grad.astype(np.float32, copy=False)
            m *= self.b1
            m += (1 - self.b1) * grad
            v *= self.b2
            v += (1 - self.b2) * np.square(grad)
            value -= (scale * m / (np.sqrt(v) + self.eps)).astype(np.float32)


def _make_optimizer(config: TrainConfig):
    return Adam(config) if config.optimizer == "adam" else SGD(config)


def _stack(batch):
    tags = {p.tag for p in batch}
    scales = {p.scale for p in batch}
    if len(tags) != 1 or len(scales) != 1:
        raise MixedBatchError(f"batch mixes tags {sorted(t.label for t in tags)} / scales {sorted(scales)}")
    x = np.concatenate([p.lr_patch for p in batch])
    y = np.concatenate([p.hr_patch for p in batch]).astype(x.dtype, copy=False)
    return x, y, tags.pop(), scales.pop()


def batch_loss_and_grads(model: PrnModel, batch):
    """Loss of a tag-homogeneous batch and gradients for its path's layers."""
    x, y, tag, scale = _stack(batch)
    pred, cache = forward_train(model, x, tag, scale)
    loss, grad = l2_loss(pred, y)
    return loss, backward_train(model, cache, grad, scale)


def train_step(model: PrnModel, batch, config: TrainConfig, optimizer=None, lr: float | None = None) -> float:
    """One update on a same-tag batch. Returns the batch loss before the update.

    Only the layers on the batch's routed path are modified.
    """
    if not batch:
        raise ValueError("empty batch")
    optimizer = optimizer or _make_optimizer(config)
    lr = config.lr if lr is None else lr
    loss, grads = batch_loss_and_grads(model, batch)
    weight = config.tag_weights.get(batch[0].tag.label, 1.0)
    if config.clip_norm is not None:
        total = math.sqrt(sum(float(np.sum(np.square(gw, dtype=np.float64)) + np.sum(np.square(gb, dtype=np.float64))) for gw, gb in grads.values()))
        if total > config.clip_norm:
            weight *= config.clip_norm / total
    for name in path_layers(model, batch[0].tag, batch[0].scale):
        gw, gb = grads[name]
        if weight != 1.0:
            gw, gb = gw * np.float32(weight), gb * np.float32(weight)
        optimizer.update(model.layers[name], name, gw, gb, lr)
    return loss


def _epoch_batches(pairs, config: TrainConfig, rng: np.random.Generator):
    """Tag-homogeneous batches interleaved round-robin: mild, moderate, severe, ..."""
    queues = {}
    for p in pairs:
        queues.setdefault((int(p.tag), p.scale), []).append(p)
    streams = []
    for key in sorted(queues):
        group = queues[key]
        order = rng.permutation(len(group))
        group = [group[i] for i in order]
        streams.append([group[i : i + config.batch_size] for i in range(0, len(group), config.batch_size)])
    out = []
    depth = max((len(s) for s in streams), default=0)
    for i in range(depth):
        for s in streams:
            if i < len(s):
                out.append(s[i])
    return out


@dataclass
class TrainResult:
    model: PrnModel
    curve: list[dict]

    def curve_csv(self) -> str:
        buf = io.StringIO()
        fields = ["epoch", "lr", "loss_mild", "loss_moderate", "loss_severe", "loss_all"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in self.curve:
            writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in fields})
        return buf.getvalue()

    def tag_loss(self, epoch_index: int, tag: str = "severe"):
        return self.curve[epoch_index][f"loss_{tag}"]


def train(model: PrnModel, pairs, config: TrainConfig, callback=None) -> TrainResult:
    """Run ``config.epochs`` epochs over ``pairs`` on a copy of ``model``.

    The loss curve records, per epoch, the mean pre-update batch loss of each
    tag. ``callback(epoch, row, model)`` is called after every epoch.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("train needs at least one training pair")
    model = model.copy()
    optimizer = _make_optimizer(config)
    rng = np.random.default_rng(config.seed)
    curve = []
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        sums: dict[str, list] = {}
        for batch in _epoch_batches(pairs, config, rng):
            loss = train_step(model, batch, config, optimizer, lr)
            acc = sums.setdefault(batch[0].tag.label, [0.0, 0])
            acc[0] += loss * len(batch)
            acc[1] += len(batch)
        row = {"epoch": epoch + 1, "lr": lr}
        for tag in Difficulty:
            acc = sums.get(tag.label)
            row[f"loss_{tag.label}"] = acc[0] / acc[1] if acc else None
        total = sum(a[1] for a in sums.values())
        row["loss_all"] = sum(a[0] for a in sums.values()) / total
        curve.append(row)
        log.debug("epoch %d lr %.2e loss %.6f", epoch + 1, lr, row["loss_all"])
        if callback is not None:
            callback(epoch, row, model)
    return TrainResult(model, curve)
