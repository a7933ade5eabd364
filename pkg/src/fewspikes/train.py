"""Training loop: encoded datasets, per-epoch metrics, divergence handling.

Everything is deterministic under a fixed seed: the shuffle order, the batch
partition, and the gradient accumulation order (fixed sample-index order
inside each vectorized batch reduction).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dlnet import softmax_ce
from .losses import Box, StIouConfig, ciou, st_iou_grad, st_iou_loss
from .mestor import MestorConfig, bin_events, encode, spatial_channel
from .network import Network, SpikeStats, _forward_surrogate, backward, forward
from .optim import AdamW, StepLR

__all__ = ["LossSpec", "EncodedDataset", "encode_clips", "TrainConfig",
           "EpochRecord", "TrainResult", "train", "evaluate"]


@dataclass(frozen=True)
class LossSpec:
    """Objective selector: softmax classification or single-box regression."""

    kind: str = "classification"     # classification | box-regression
    st_iou: StIouConfig = StIouConfig()
    objectness_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("classification", "box-regression"):
            raise ValueError(f"unknown loss kind {self.kind!r}")


@dataclass
class EncodedDataset:
    """Encoded clips ready for the network.

    ``spike_maps`` holds the raw accumulated histograms (pre-normalization)
    used by the density term of the regression loss.
    """

    frames: np.ndarray                    # (N, 3, H, W)
    labels: np.ndarray                    # (N,) int
    boxes: np.ndarray | None = None       # (N, 4) center format
    spike_maps: np.ndarray | None = None  # (N, H, W)

    def __len__(self) -> int:
        return len(self.frames)


def encode_clips(clips, cfg: MestorConfig) -> EncodedDataset:
    """Encode labeled clips into frames, labels, boxes, and raw spike maps."""
    frames, labels, boxes, maps = [], [], [], []
    for clip in clips:
        frames.append(encode(clip.stream, cfg).stacked())
        labels.append(clip.label)
        boxes.append(clip.box)
        maps.append(spatial_channel(bin_events(clip.stream, cfg)))
    return EncodedDataset(
        frames=np.array(frames),
        labels=np.array(labels, dtype=np.int64),
        boxes=np.array(boxes, dtype=np.float64),
        spike_maps=np.array(maps),
    )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-2
    step_size: int = 10
    gamma: float = 0.5
    seed: int = 0
    rounding: str = "floor"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    metric: float          # accuracy or mean CIoU
    firing_rate: float
    wall_time_s: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "metric": self.metric,
                "firing_rate": self.firing_rate, "wall_time_s": self.wall_time_s}


@dataclass
class TrainResult:
    log: list[EpochRecord]
    diverged: bool = False

    @property
    def final(self) -> EpochRecord | None:
        return self.log[-1] if self.log else None


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _boxes_from_outputs(raw: np.ndarray, geometry: tuple[int, int]):
    """Map raw head outputs to boxes: sigmoid-bounded center and extent."""
    h, w = geometry
    s = np.clip(_sigmoid(raw[:, :4]), 1e-6, 1.0 - 1e-6)
    scale = np.array([w, h, w, h], dtype=np.float64)
    params = s * scale
    return params, s, scale


def _classification_batch(net, frames, labels, n_classes, rounding):
    out, stats, cache = _forward_surrogate(net, frames, rounding, want_cache=True)
    n = len(frames)
    losses = np.empty(n)
    d_out = np.empty_like(out)
    for i in range(n):
        onehot = np.zeros(n_classes)
        onehot[labels[i]] = 1.0
        losses[i], d_out[i] = softmax_ce(out[i], onehot)
    d_out /= n
    grads = backward(net, cache, d_out)
    acc = float(np.mean(np.argmax(out, axis=1) == labels))
    return float(losses.mean()), acc, stats, grads


def _box_batch(net, frames, boxes_gt, spike_maps, spec: LossSpec, rounding):
    out, stats, cache = _forward_surrogate(net, frames, rounding, want_cache=True)
    n = len(frames)
    geometry = frames.shape[2], frames.shape[3]
    params, s, scale = _boxes_from_outputs(out, geometry)
    obj = np.clip(_sigmoid(out[:, 4]), 1e-12, 1.0 - 1e-12)
    losses = np.empty(n)
    cious = np.empty(n)
    d_out = np.zeros_like(out)
    for i in range(n):
        pred = Box(*params[i])
        gt = Box(*boxes_gt[i])
        losses[i] = (st_iou_loss(pred, gt, spike_maps[i], spec.st_iou)
                     - spec.objectness_weight * np.log(obj[i]))
        cious[i] = ciou(pred, gt)
        d_box = st_iou_grad(pred, gt, spike_maps[i], spec.st_iou)
        d_out[i, :4] = d_box * scale * s[i] * (1.0 - s[i])
        d_out[i, 4] = spec.objectness_weight * (obj[i] - 1.0)
    d_out /= n
    grads = backward(net, cache, d_out)
    return float(losses.mean()), float(cious.mean()), stats, grads


def _named_params(net: Network):
    named = []
    for i, spec in enumerate(net.specs):
        if spec.weighted:
            named.append((f"layer{i}.weight", net.weights[i]))
            named.append((f"layer{i}.bias", net.biases[i]))
    return named


def _flatten_grads(net: Network, grads):
    flat = []
    for i, spec in enumerate(net.specs):
        if spec.weighted:
            flat.append(grads[i][0])
            flat.append(grads[i][1])
    return flat


def train(net: Network, dataset: EncodedDataset, loss_spec: LossSpec,
          cfg: TrainConfig) -> TrainResult:
    """Run the optimization loop; returns the per-epoch log.

    A non-finite loss aborts the run: the weights revert to the end of the
    last finite epoch and the result is flagged as diverged.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    n_classes = net.shapes[-1][0]
    opt = AdamW(_named_params(net), lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = StepLR(opt, cfg.step_size, cfg.gamma)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    log: list[EpochRecord] = []
    snapshot = net.copy_weights()
    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        sched.set_epoch(epoch)
        order = rng.permutation(len(dataset))
        ep_loss, ep_metric, n_batches = 0.0, 0.0, 0
        ep_stats = SpikeStats()
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            frames = dataset.frames[idx]
            if loss_spec.kind == "classification":
                loss, metric, stats, grads = _classification_batch(
                    net, frames, dataset.labels[idx], n_classes, cfg.rounding)
            else:
                loss, metric, stats, grads = _box_batch(
                    net, frames, dataset.boxes[idx], dataset.spike_maps[idx],
                    loss_spec, cfg.rounding)
            if not np.isfinite(loss):
                net.restore_weights(snapshot)
                return TrainResult(log, diverged=True)
            opt.step(_flatten_grads(net, grads))
            ep_loss += loss
            ep_metric += metric
            n_batches += 1
            ep_stats.spikes += stats.spikes
            ep_stats.slots += stats.slots
        snapshot = net.copy_weights()
        log.append(EpochRecord(
            epoch=epoch,
            loss=ep_loss / n_batches,
            metric=ep_metric / n_batches,
            firing_rate=ep_stats.firing_rate,
            wall_time_s=time.monotonic() - t0,
        ))
    return TrainResult(log)


def evaluate(net: Network, dataset: EncodedDataset, loss_spec: LossSpec,
             rounding: str = "floor") -> tuple[float, float]:
    """(mean loss, metric) over the dataset without updating weights."""
    if loss_spec.kind == "classification":
        out, _ = forward(net, dataset.frames, rounding=rounding)
        n_classes = net.shapes[-1][0]
        losses = []
        for i in range(len(dataset)):
            onehot = np.zeros(n_classes)
            onehot[dataset.labels[i]] = 1.0
            losses.append(softmax_ce(out[i], onehot)[0])
        acc = float(np.mean(np.argmax(out, axis=1) == dataset.labels))
        return float(np.mean(losses)), acc
    out, _ = forward(net, dataset.frames, rounding=rounding)
    geometry = dataset.frames.shape[2], dataset.frames.shape[3]
    params, _, _ = _boxes_from_outputs(out, geometry)
    obj = np.clip(_sigmoid(out[:, 4]), 1e-12, 1.0 - 1e-12)
    losses, cious = [], []
    for i in range(len(dataset)):
        pred = Box(*params[i])
        gt = Box(*dataset.boxes[i])
        losses.append(st_iou_loss(pred, gt, dataset.spike_maps[i], loss_spec.st_iou)
                      - loss_spec.objectness_weight * np.log(obj[i]))
        cious.append(ciou(pred, gt))
    return float(np.mean(losses)), float(np.mean(cious))
