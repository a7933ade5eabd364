"""Discrete-level surrogate activation: clip -> quantize forward, gated backward.

The forward pass reproduces the values a few-spikes train represents
(clip to [0, X], snap to the X_min grid); the backward pass treats the
rounding as identity and gates gradients to the un-clipped band [0, X].
In ``floor`` mode the activation is bit-equivalent to encode-then-decode
through :mod:`fewspikes.neurons`, which is what lets the spike-domain and
surrogate forward passes share one weight store.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neurons import FsnConfig

__all__ = ["QuantizerConfig", "clip", "quantize", "activation_forward",
           "activation_backward", "softmax_ce"]

ROUNDING_MODES = ("floor", "round", "identity")


@dataclass(frozen=True)
class QuantizerConfig:
    """Quantizer derived from an FSN schedule.

    ``floor`` (default) matches the spike encoder exactly; ``round`` is the
    literal round-half-even variant; ``identity`` skips the grid snap and is
    the relaxed activation used by gradient checks (clip still applies).
    """

    fsn: FsnConfig = FsnConfig()
    rounding: str = "floor"

    def __post_init__(self) -> None:
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"rounding must be one of {ROUNDING_MODES}, got {self.rounding!r}")


def clip(x, cfg: QuantizerConfig):
    """Clamp to [0, X]: zero below, identity inside, X above."""
    return np.clip(x, 0.0, cfg.fsn.x_max)


def _exact_floor_levels(x: np.ndarray, step: float) -> np.ndarray:
    # floor(x / step) with the division boundary corrected so that on-grid
    # inputs and near-grid inputs land on the true level.
    q = np.floor(x / step)
    q += (q + 1.0) * step <= x
    q -= q * step > x
    return q


def quantize(x_q, cfg: QuantizerConfig):
    """Snap a clipped value onto the X_min grid.

    Floor mode rounds down (bit-equivalent to the spike encoder); round mode
    is round-half-even to the nearest level.  Inputs must already lie in
    [0, X] -- callers clip first.
    """
    x_q = np.asarray(x_q, dtype=np.float64)
    if np.any(x_q < 0.0) or np.any(x_q > cfg.fsn.x_max):
        raise ValueError(f"quantize input outside [0, {cfg.fsn.x_max}]; clip first")
    step = cfg.fsn.x_min
    if cfg.rounding == "floor":
        out = _exact_floor_levels(x_q, step) * step
    elif cfg.rounding == "round":
        out = np.round(x_q / step) * step
    else:  # identity
        out = x_q.copy()
    return out if out.ndim else float(out)


def activation_forward(x, cfg: QuantizerConfig):
    """Element-wise clip then quantize.  Keep the pre-clip input for backward."""
    x = np.asarray(x, dtype=np.float64)
    return quantize(clip(x, cfg), cfg)


def activation_backward(upstream, saved_x, cfg: QuantizerConfig):
    """Gate the upstream gradient: pass inside [0, X] (inclusive), zero outside.

    ``saved_x`` is the pre-clip input recorded by the forward pass.  The
    rounding step contributes identity; the clip contributes the rect gate.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    saved_x = np.asarray(saved_x, dtype=np.float64)
    if upstream.shape != saved_x.shape:
        raise ValueError(f"shape mismatch: upstream {upstream.shape} vs saved {saved_x.shape}")
    gate = (saved_x >= 0.0) & (saved_x <= cfg.fsn.x_max)
    return upstream * gate


def softmax_ce(logits, one_hot) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy and its gradient, max-shifted for stability.

    Returns (loss, softmax(logits) - one_hot).  ``one_hot`` must be a valid
    one-hot vector of the same length as ``logits``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if logits.shape != one_hot.shape:
        raise ValueError(f"dimension mismatch: {logits.shape} vs {one_hot.shape}")
    if not (np.all((one_hot == 0.0) | (one_hot == 1.0)) and one_hot.sum() == 1.0):
        raise ValueError("target is not a one-hot vector")
    shifted = logits - logits.max()
    log_z = np.log(np.sum(np.exp(shifted)))
    log_probs = shifted - log_z
    loss = -float(np.sum(one_hot * log_probs))
    grad = np.exp(log_probs) - one_hot
    return loss, grad
