"""Multi-scale spatiotemporal event integrator.

Turns an event stream into a 3-channel frame:

* ST -- binary continuity map: each pixel drives a few-spikes neuron for K
  steps with the 3x3-filtered event counts of successive time bins; the pixel
  survives iff it spikes in at least ``keep_threshold`` steps.
* S  -- accumulated histogram over all bins (spatial scale).
* T  -- last-bin histogram (temporal scale).

S and T are normalized to [0, 1]; polarity is discarded before binning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventStream
from .neurons import FsnConfig

__all__ = ["MestorConfig", "MestorFrame", "bin_events", "continuity_map",
           "spatial_channel", "temporal_channel", "encode"]


def _default_kernel() -> np.ndarray:
    return np.ones((3, 3), dtype=np.float64)


@dataclass(frozen=True)
class MestorConfig:
    """Encoder parameters.

    ``n_bins`` defaults to the continuity window K (one bin per FSN step);
    with more bins only the first K feed the continuity neuron while S/T use
    all of them.  ``delta_t_us`` overrides the bin length otherwise derived
    from the clip duration.  ``keep_threshold`` defaults to K-1.
    """

    continuity: FsnConfig = FsnConfig(alpha=1.0, K=5)
    n_bins: int | None = None
    delta_t_us: float | None = None
    kernel: np.ndarray = field(default_factory=_default_kernel)
    keep_threshold: int | None = None
    normalization: str = "max"          # max | clamp
    clamp_cap: float = 8.0

    def __post_init__(self) -> None:
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.shape != (3, 3):
            raise ValueError(f"kernel must be 3x3, got {k.shape}")
        if np.any(k < 0):
            raise ValueError("kernel entries must be non-negative")
        object.__setattr__(self, "kernel", k)
        if self.n_bins is not None and self.n_bins < self.continuity.K:
            raise ValueError(f"n_bins={self.n_bins} < K={self.continuity.K}")
        if self.normalization not in ("max", "clamp"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.clamp_cap <= 0:
            raise ValueError("clamp_cap must be positive")

    @property
    def bins(self) -> int:
        return self.n_bins if self.n_bins is not None else self.continuity.K

    @property
    def keep_cutoff(self) -> int:
        return self.keep_threshold if self.keep_threshold is not None else self.continuity.K - 1


@dataclass(frozen=True)
class MestorFrame:
    """The assembled 3-channel input: st is {0,1}, s and t lie in [0,1]."""

    st: np.ndarray
    s: np.ndarray
    t: np.ndarray

    def stacked(self) -> np.ndarray:
        """(3, H, W) array in ST, S, T order."""
        return np.stack([self.st, self.s, self.t]).astype(np.float64)


def bin_events(stream: EventStream, cfg: MestorConfig) -> np.ndarray:
    """Split the stream into N equal-length bins of per-pixel event counts.

    Returns (N, H, W) counts.  Events are placed by time relative to the
    first event; intervals are half-open with the last bin closed on the
    right, so every event lands in exactly one bin.
    """
    n = cfg.bins
    hist = np.zeros((n, stream.height, stream.width), dtype=np.float64)
    if len(stream) == 0:
        return hist
    t = stream.events["t"].astype(np.float64)
    rel = t - t[0]
    if cfg.delta_t_us is not None:
        dt = float(cfg.delta_t_us)
    else:
        dt = stream.duration / n if stream.duration > 0 else 0.0
    if dt > 0:
        idx = np.clip((rel / dt).astype(np.int64), 0, n - 1)
    else:
        idx = np.full(len(t), n - 1, dtype=np.int64)  # degenerate: single-instant clip
    np.add.at(hist, (idx, stream.events["y"].astype(np.int64), stream.events["x"].astype(np.int64)), 1.0)
    return hist


def _conv3x3_same(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 correlation."""
    h, w = image.shape
    padded = np.zeros((h + 2, w + 2), dtype=np.float64)
    padded[1:-1, 1:-1] = image
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * padded[dy:dy + h, dx:dx + w]
    return out


def continuity_map(bins: np.ndarray, cfg: MestorConfig) -> np.ndarray:
    """Run the per-pixel continuity neuron over the first K bins.

    Each step adds the 3x3-filtered counts of the next bin to the membrane,
    fires against the decaying threshold schedule, and subtracts the
    threshold on a spike.  Returns the {0,1} keep map: spike count >= cutoff.
    """
    fsn = cfg.continuity
    if bins.shape[0] < fsn.K:
        raise ValueError(f"need at least K={fsn.K} bins, got {bins.shape[0]}")
    membrane = np.zeros(bins.shape[1:], dtype=np.float64)
    spike_count = np.zeros(bins.shape[1:], dtype=np.int64)
    for t, th in enumerate(fsn.thresholds):
        membrane = membrane + _conv3x3_same(bins[t], cfg.kernel)
        fired = membrane >= th
        spike_count += fired
        membrane = membrane - th * fired
    return (spike_count >= cfg.keep_cutoff).astype(np.float64)


def _normalize(channel: np.ndarray, cfg: MestorConfig) -> np.ndarray:
    if cfg.normalization == "max":
        peak = channel.max()
        return channel / peak if peak > 0 else channel
    return np.minimum(channel, cfg.clamp_cap) / cfg.clamp_cap


def spatial_channel(bins: np.ndarray) -> np.ndarray:
    """Raw accumulated histogram: sum of all bins (pre-normalization)."""
    return bins.sum(axis=0)


def temporal_channel(bins: np.ndarray) -> np.ndarray:
    """Raw last-bin histogram (pre-normalization)."""
    return bins[-1].copy()


def encode(stream: EventStream, cfg: MestorConfig) -> MestorFrame:
    """Full pipeline: bin, continuity-filter, normalize, stack."""
    bins = bin_events(stream, cfg)
    st = continuity_map(bins, cfg)
    s = _normalize(spatial_channel(bins), cfg)
    t = _normalize(temporal_channel(bins), cfg)
    return MestorFrame(st=st, s=s, t=t)
