"""Few-spikes neurons (FSN) and the LIF family of baseline neurons.

An FSN emits a K-step binary train under geometrically decaying thresholds
``U_th(t) = alpha * 2**-t`` and matching readout coefficients ``d(t)``.
Encoding a membrane potential and integrating the train back realizes a
floor quantizer of a bounded ReLU: the input is clipped to ``[0, X]`` and
rounded down to the nearest multiple of ``X_min``, with
``X = alpha * (1 - 2**-K)`` and ``X_min = alpha * 2**-K``.

The greedy subtract-on-spike recursion is exact in IEEE double arithmetic
(each subtraction satisfies Sterbenz's condition), so encode/decode agrees
bit-for-bit with the floor quantizer used by the surrogate network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FsnConfig",
    "SpikeTrain",
    "LifConfig",
    "LReluConfig",
    "fsn_encode",
    "fsn_encode_array",
    "fsn_decode",
    "fsn_lrelu_encode",
    "fsn_lrelu_decode",
    "lif_step",
]


@dataclass(frozen=True)
class FsnConfig:
    """Threshold/coefficient schedule of a few-spikes neuron.

    ``alpha`` bounds the representable range, ``K`` is the train length.
    The schedule is the power-of-two setting ``U_th(t) = d(t) = alpha * 2**-t``.
    """

    alpha: float = 1.0
    K: int = 5

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")

    @property
    def thresholds(self) -> np.ndarray:
        """U_th(t) for t = 1..K."""
        return self.alpha * 2.0 ** -np.arange(1, self.K + 1)

    @property
    def coefficients(self) -> np.ndarray:
        """d(t) for t = 1..K (equal to the thresholds under this schedule)."""
        return self.thresholds

    @property
    def x_max(self) -> float:
        """Largest representable value X = alpha * (1 - 2**-K)."""
        return self.alpha * (1.0 - 2.0**-self.K)

    @property
    def x_min(self) -> float:
        """Quantization step X_min = alpha * 2**-K (the value of the last spike)."""
        return self.alpha * 2.0**-self.K


@dataclass(frozen=True)
class SpikeTrain:
    """A length-K spike train; bits are {0,1}, or {-1,0,1} when signed."""

    bits: tuple[int, ...]
    signed: bool = False

    def __post_init__(self) -> None:
        allowed = {-1, 0, 1} if self.signed else {0, 1}
        if not set(self.bits) <= allowed:
            raise ValueError(f"spike values {set(self.bits) - allowed} not allowed")

    @property
    def K(self) -> int:
        return len(self.bits)

    def count(self) -> int:
        """Number of emitted spikes (of either sign)."""
        return sum(1 for b in self.bits if b != 0)


def fsn_encode(u: float, cfg: FsnConfig) -> SpikeTrain:
    """Encode a membrane potential into a K-bit train.

    At each step t a spike fires iff the residual is >= U_th(t); the residual
    then decays by U_th(t).  Non-positive inputs give the all-zero train,
    inputs >= alpha give the all-one train.
    """
    bits = []
    residual = float(u)
    for th in cfg.thresholds:
        fire = residual >= th
        bits.append(1 if fire else 0)
        if fire:
            residual -= th
    return SpikeTrain(tuple(bits))


def fsn_encode_array(x: np.ndarray, cfg: FsnConfig) -> np.ndarray:
    """Vectorized encode: returns a (K, *x.shape) float array of {0,1} bits."""
    x = np.asarray(x, dtype=np.float64)
    bits = np.empty((cfg.K,) + x.shape, dtype=np.float64)
    residual = x.copy()
    for t, th in enumerate(cfg.thresholds):
        fire = residual >= th
        bits[t] = fire
        residual -= th * bits[t]
    return bits


def fsn_decode(train: SpikeTrain | np.ndarray, cfg: FsnConfig) -> float | np.ndarray:
    """Integrate a train with the coefficient schedule: sum_t d(t) * bits(t).

    Accepts a SpikeTrain (returns a float) or a (K, ...) bit array from
    :func:`fsn_encode_array` (returns an array of decoded values).
    """
    d = cfg.coefficients
    if isinstance(train, SpikeTrain):
        if train.K != cfg.K:
            raise ValueError(f"train length {train.K} != K={cfg.K}")
        return float(np.dot(d, np.asarray(train.bits, dtype=np.float64)))
    train = np.asarray(train, dtype=np.float64)
    if train.shape[0] != cfg.K:
        raise ValueError(f"leading axis {train.shape[0]} != K={cfg.K}")
    return np.tensordot(d, train, axes=(0, 0))


@dataclass(frozen=True)
class LReluConfig:
    """Signed-FSN parameters emulating a bounded leaky ReLU."""

    base: FsnConfig
    beta_neg: float = 0.1

    def __post_init__(self) -> None:
        if not (0.0 < self.beta_neg < 1.0):
            raise ValueError(f"beta_neg must be in (0, 1), got {self.beta_neg}")


def fsn_lrelu_encode(u: float, cfg: LReluConfig) -> SpikeTrain:
    """Signed greedy expansion: -1 fires when the residual is <= -U_th(t).

    For u >= 0 this reduces to the unsigned encoder.
    """
    bits = []
    residual = float(u)
    for th in cfg.base.thresholds:
        if residual >= th:
            b = 1
        elif residual <= -th:
            b = -1
        else:
            b = 0
        bits.append(b)
        residual -= th * b
    return SpikeTrain(tuple(bits), signed=True)


def fsn_lrelu_decode(train: SpikeTrain, cfg: LReluConfig) -> float:
    """Integrate a signed train; negative spikes carry the beta_neg slope."""
    if train.K != cfg.base.K:
        raise ValueError(f"train length {train.K} != K={cfg.base.K}")
    total = 0.0
    for d, b in zip(cfg.base.coefficients, train.bits):
        total += d * b * (cfg.beta_neg if b < 0 else 1.0)
    return total


@dataclass(frozen=True)
class LifConfig:
    """Leaky integrate-and-fire parameters; ``variant`` selects LIF/PLIF/IF.

    The PLIF leak is k(a) = sigmoid(plif_a); the IF variant has no leak and
    its reset potential is forced to 0.
    """

    tau: float = 2.0
    u_th: float = 1.0
    u_reset: float = 0.0
    variant: str = "LIF"
    plif_a: float = 0.0
    # Fire on the membrane *before* integrating the current input (the written
    # evaluation order); set True for the conventional integrate-then-fire.
    integrate_then_fire: bool = False

    def __post_init__(self) -> None:
        if self.variant not in ("LIF", "PLIF", "IF"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "LIF" and self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.variant == "IF" and self.u_reset != 0.0:
            object.__setattr__(self, "u_reset", 0.0)

    def leak(self) -> float:
        """Per-step leak factor: 1/tau for LIF, sigmoid(a) for PLIF."""
        if self.variant == "PLIF":
            return 1.0 / (1.0 + math.exp(-self.plif_a))
        return 1.0 / self.tau


def lif_step(u: float, input_current: float, cfg: LifConfig) -> tuple[int, float]:
    """One discrete step of a LIF-family neuron: returns (spike, next membrane).

    Default order: threshold test on the current membrane, then the decayed
    update ``u + (I + U_reset - u) * leak`` (IF: plain accumulation), then
    reset to U_reset if a spike fired.
    """

    def integrate(m: float) -> float:
        if cfg.variant == "IF":
            return m + input_current
        return m + (input_current + cfg.u_reset - m) * cfg.leak()

    if cfg.integrate_then_fire:
        u_next = integrate(u)
        spike = 1 if u_next >= cfg.u_th else 0
    else:
        spike = 1 if u >= cfg.u_th else 0
        u_next = integrate(u)
    if spike:
        u_next = cfg.u_reset
    return spike, u_next
