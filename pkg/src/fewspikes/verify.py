"""Finite-difference verification of the analytic backward pass.

The check runs on the relaxed activation (grid snap replaced by identity,
clip kept), where the analytic gradients are the true gradients except on
the measure-zero clip boundaries.  Weights whose +/-h perturbation flips any
clip gate are excluded: the loss is not differentiable across such a kink,
so a central difference there measures nothing meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dlnet import softmax_ce
from .network import Network, _forward_surrogate, backward

__all__ = ["GradientCheckResult", "gradient_check"]


@dataclass(frozen=True)
class GradientCheckResult:
    max_rel_error: float
    n_checked: int
    n_skipped_kink: int


def _loss_and_gates(net: Network, x: np.ndarray, labels: np.ndarray):
    out, _, cache = _forward_surrogate(net, x, rounding="identity", want_cache=True)
    n_classes = out.shape[1]
    losses = np.empty(len(x))
    d_out = np.empty_like(out)
    for i, lbl in enumerate(labels):
        onehot = np.zeros(n_classes)
        onehot[lbl] = 1.0
        losses[i], d_out[i] = softmax_ce(out[i], onehot)
    d_out /= len(x)
    gates = [
        ((c["x_pre"] >= 0.0) & (c["x_pre"] <= c["qcfg"].fsn.x_max))
        for c in cache if c is not None
    ]
    return float(losses.mean()), d_out, cache, gates


def gradient_check(net: Network, x: np.ndarray, labels: np.ndarray,
                   h: float = 1e-4, max_weights: int | None = None,
                   seed: int = 0) -> GradientCheckResult:
    """Compare analytic weight gradients against central differences.

    ``max_weights`` samples that many coordinates uniformly (deterministic in
    ``seed``) instead of sweeping every parameter.  The relative error floor
    scales with the largest analytic gradient so negligible components do not
    dominate the ratio.
    """
    x = np.asarray(x, dtype=np.float64)
    base_loss, d_out, cache, base_gates = _loss_and_gates(net, x, labels)
    grads = backward(net, cache, d_out)
    analytic = []
    tensors = []
    for i, spec in enumerate(net.specs):
        if spec.weighted:
            analytic.extend([grads[i][0], grads[i][1]])
            tensors.extend([net.weights[i], net.biases[i]])

    coords = [(ti, j) for ti, t in enumerate(tensors) for j in range(t.size)]
    if max_weights is not None and max_weights < len(coords):
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        pick = rng.choice(len(coords), size=max_weights, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    g_scale = max(float(np.abs(g).max()) for g in analytic)
    floor = max(1e-8, 1e-4 * g_scale)

    max_rel = 0.0
    checked = skipped = 0
    for ti, j in coords:
        flat = tensors[ti].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        loss_plus, _, _, gates_plus = _loss_and_gates(net, x, labels)
        flat[j] = orig - h
        loss_minus, _, _, gates_minus = _loss_and_gates(net, x, labels)
        flat[j] = orig
        kink = any(
            not (np.array_equal(gp, gb) and np.array_equal(gm, gb))
            for gp, gm, gb in zip(gates_plus, gates_minus, base_gates)
        )
        if kink:
            skipped += 1
            continue
        fd = (loss_plus - loss_minus) / (2.0 * h)
        a = float(analytic[ti].reshape(-1)[j])
        rel = abs(a - fd) / max(abs(a), abs(fd), floor)
        max_rel = max(max_rel, rel)
        checked += 1
    return GradientCheckResult(max_rel, checked, skipped)
