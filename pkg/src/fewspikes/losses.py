"""Box-regression losses: CIoU, the spike-density mismatch term, and their
combination used for event-based detection.

The density term compares in-box spike density (count / area) between the
predicted and ground-truth boxes on a per-pixel spike map.  Inside the
combined loss it is normalized by the larger of the two densities so the
term is dimensionless and bounded; larger mismatch always means larger loss.
A ``literal_combination`` flag keeps the unnormalized additive variant
(mismatch added to the score rather than the loss) for ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Box", "StIouConfig", "iou", "ciou", "ciou_grad", "spiking_iou",
           "st_iou_loss", "st_iou_grad", "detection_loss"]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in center format (pixels); w and h must be positive."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extent must be positive, got w={self.w}, h={self.h}")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1)."""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class StIouConfig:
    """Weights of the combined loss: ``a`` scales the density mismatch term,
    ``b`` scales CIoU.  ``eps`` floors the density normalizer."""

    a: float = 0.5
    b: float = 1.0
    eps: float = 1e-6
    literal_combination: bool = False

    def __post_init__(self) -> None:
        if self.a < 0 or self.b < 0:
            raise ValueError("weights must be non-negative")
        if self.a + self.b <= 0:
            raise ValueError("at least one of a, b must be positive")


def iou(pred: Box, gt: Box) -> float:
    px0, py0, px1, py1 = pred.corners
    gx0, gy0, gx1, gy1 = gt.corners
    iw = max(0.0, min(px1, gx1) - max(px0, gx0))
    ih = max(0.0, min(py1, gy1) - max(py0, gy0))
    inter = iw * ih
    union = pred.area + gt.area - inter
    return inter / union


def ciou(pred: Box, gt: Box) -> float:
    """Complete IoU: IoU - center-distance penalty - aspect-ratio penalty.

    Equals 1 for identical boxes and is always <= IoU.
    """
    px0, py0, px1, py1 = pred.corners
    gx0, gy0, gx1, gy1 = gt.corners
    value = iou(pred, gt)
    rho2 = (pred.cx - gt.cx) ** 2 + (pred.cy - gt.cy) ** 2
    cw = max(px1, gx1) - min(px0, gx0)
    ch = max(py1, gy1) - min(py0, gy0)
    c2 = cw**2 + ch**2
    v = (4.0 / math.pi**2) * (math.atan(gt.w / gt.h) - math.atan(pred.w / pred.h)) ** 2
    alpha = 0.0 if v == 0.0 else v / ((1.0 - value) + v)
    return value - rho2 / c2 - alpha * v


def ciou_grad(pred: Box, gt: Box) -> np.ndarray:
    """d(CIoU)/d(cx, cy, w, h) of the predicted box.

    Exact piecewise-smooth subgradients, including the dependence of the
    aspect-ratio weight alpha on IoU and v.
    """
    px0, py0, px1, py1 = pred.corners
    gx0, gy0, gx1, gy1 = gt.corners

    iw = min(px1, gx1) - max(px0, gx0)
    ih = min(py1, gy1) - max(py0, gy0)
    overlap = iw > 0 and ih > 0
    inter = iw * ih if overlap else 0.0
    union = pred.area + gt.area - inter
    iou_val = inter / union

    # d(intersection width)/d(cx, w): indicator of which edge is binding
    if overlap:
        diw_dcx = (1.0 if px1 < gx1 else 0.0) - (1.0 if px0 > gx0 else 0.0)
        diw_dw = 0.5 * (1.0 if px1 < gx1 else 0.0) + 0.5 * (1.0 if px0 > gx0 else 0.0)
        dih_dcy = (1.0 if py1 < gy1 else 0.0) - (1.0 if py0 > gy0 else 0.0)
        dih_dh = 0.5 * (1.0 if py1 < gy1 else 0.0) + 0.5 * (1.0 if py0 > gy0 else 0.0)
        d_inter = np.array([
            diw_dcx * ih,
            dih_dcy * iw,
            diw_dw * ih,
            dih_dh * iw,
        ])
    else:
        d_inter = np.zeros(4)
    d_area = np.array([0.0, 0.0, pred.h, pred.w])
    d_union = d_area - d_inter
    d_iou = (d_inter * union - inter * d_union) / union**2

    rho2 = (pred.cx - gt.cx) ** 2 + (pred.cy - gt.cy) ** 2
    d_rho2 = np.array([2 * (pred.cx - gt.cx), 2 * (pred.cy - gt.cy), 0.0, 0.0])
    cw = max(px1, gx1) - min(px0, gx0)
    ch = max(py1, gy1) - min(py0, gy0)
    dcw_dcx = (1.0 if px1 > gx1 else 0.0) - (1.0 if px0 < gx0 else 0.0)
    dcw_dw = 0.5 * (1.0 if px1 > gx1 else 0.0) + 0.5 * (1.0 if px0 < gx0 else 0.0)
    dch_dcy = (1.0 if py1 > gy1 else 0.0) - (1.0 if py0 < gy0 else 0.0)
    dch_dh = 0.5 * (1.0 if py1 > gy1 else 0.0) + 0.5 * (1.0 if py0 < gy0 else 0.0)
    c2 = cw**2 + ch**2
    d_c2 = np.array([2 * cw * dcw_dcx, 2 * ch * dch_dcy, 2 * cw * dcw_dw, 2 * ch * dch_dh])
    d_pen = (d_rho2 * c2 - rho2 * d_c2) / c2**2

    datan = math.atan(gt.w / gt.h) - math.atan(pred.w / pred.h)
    v = (4.0 / math.pi**2) * datan**2
    denom = pred.w**2 + pred.h**2
    d_v = np.array([
        0.0,
        0.0,
        -(8.0 / math.pi**2) * datan * pred.h / denom,
        (8.0 / math.pi**2) * datan * pred.w / denom,
    ])
    if v == 0.0:
        d_alpha_v = np.zeros(4)  # alpha*v has a double zero here
    else:
        s = (1.0 - iou_val) + v
        alpha = v / s
        d_alpha = (d_v * s - v * (-d_iou + d_v)) / s**2
        d_alpha_v = d_alpha * v + alpha * d_v
    return d_iou - d_pen - d_alpha_v


def _box_pixels(box: Box, shape: tuple[int, int]) -> tuple[int, int, int, int]:
    """Half-open pixel ranges (x0, x1, y0, y1) covered by the box, clipped."""
    h, w = shape
    bx0, by0, bx1, by1 = box.corners
    x0 = max(0, int(math.floor(bx0)))
    y0 = max(0, int(math.floor(by0)))
    x1 = min(w, int(math.ceil(bx1)))
    y1 = min(h, int(math.ceil(by1)))
    return x0, x1, y0, y1


def _density(box: Box, spike_map: np.ndarray) -> float:
    """In-box spike density: clipped count over clipped continuous area."""
    h, w = spike_map.shape
    bx0, by0, bx1, by1 = box.corners
    cw = min(bx1, w) - max(bx0, 0.0)
    ch = min(by1, h) - max(by0, 0.0)
    if cw <= 0 or ch <= 0:
        return 0.0
    x0, x1, y0, y1 = _box_pixels(box, spike_map.shape)
    count = float(spike_map[y0:y1, x0:x1].sum())
    return count / (cw * ch)


def spiking_iou(pred: Box, gt: Box, spike_map: np.ndarray) -> float:
    """Absolute difference of in-box spike densities (0 = identical)."""
    spike_map = np.asarray(spike_map, dtype=np.float64)
    return abs(_density(gt, spike_map) - _density(pred, spike_map))


def st_iou_loss(pred: Box, gt: Box, spike_map: np.ndarray, cfg: StIouConfig = StIouConfig()) -> float:
    """Regression loss: 1 - b*CIoU + a*(normalized density mismatch).

    The mismatch is divided by max(rho_gt, rho_pred, eps) so it lands in
    [0, 1].  With ``literal_combination`` the raw additive form
    ``1 - (a*mismatch + b*CIoU)`` is used instead.
    """
    spike_map = np.asarray(spike_map, dtype=np.float64)
    c = ciou(pred, gt)
    mismatch = spiking_iou(pred, gt, spike_map)
    if cfg.literal_combination:
        return 1.0 - (cfg.a * mismatch + cfg.b * c)
    norm = max(_density(gt, spike_map), _density(pred, spike_map), cfg.eps)
    return 1.0 - cfg.b * c + cfg.a * mismatch / norm


def st_iou_grad(pred: Box, gt: Box, spike_map: np.ndarray, cfg: StIouConfig = StIouConfig()) -> np.ndarray:
    """d(loss)/d(cx, cy, w, h) of the predicted box.

    In-box spike counts are treated as constants within a rasterization cell,
    so these are subgradients, finite wherever the boxes overlap the map.
    """
    spike_map = np.asarray(spike_map, dtype=np.float64)
    h, w = spike_map.shape
    d_ciou = ciou_grad(pred, gt)

    rho_g = _density(gt, spike_map)
    rho_p = _density(pred, spike_map)
    bx0, by0, bx1, by1 = pred.corners
    cw = min(bx1, w) - max(bx0, 0.0)
    ch = min(by1, h) - max(by0, 0.0)
    if cw > 0 and ch > 0 and rho_p > 0:
        dcw = np.array([(1.0 if bx1 < w else 0.0) - (1.0 if bx0 > 0 else 0.0), 0.0,
                        0.5 * (1.0 if bx1 < w else 0.0) + 0.5 * (1.0 if bx0 > 0 else 0.0), 0.0])
        dch = np.array([0.0, (1.0 if by1 < h else 0.0) - (1.0 if by0 > 0 else 0.0),
                        0.0, 0.5 * (1.0 if by1 < h else 0.0) + 0.5 * (1.0 if by0 > 0 else 0.0)])
        # count constant in cell interiors: d rho_p = -rho_p * d(area)/area
        d_rho_p = -rho_p * (dcw / cw + dch / ch)
    else:
        d_rho_p = np.zeros(4)

    diff = rho_g - rho_p
    d_mismatch = -np.sign(diff) * d_rho_p if diff != 0.0 else np.abs(d_rho_p)
    if cfg.literal_combination:
        return -(cfg.a * d_mismatch + cfg.b * d_ciou)
    norm = max(rho_g, rho_p, cfg.eps)
    d_norm = d_rho_p if (rho_p > rho_g and rho_p > cfg.eps) else np.zeros(4)
    d_term = (d_mismatch * norm - abs(diff) * d_norm) / norm**2
    return -cfg.b * d_ciou + cfg.a * d_term


def detection_loss(
    pred_box: Box,
    objectness: float,
    gt_box: Box,
    spike_map: np.ndarray,
    cfg: StIouConfig = StIouConfig(),
    class_logits: np.ndarray | None = None,
    class_target: int | None = None,
) -> float:
    """Single-object detection loss: regression + objectness BCE (+ class CE).

    The classification term is only present when class logits are supplied.
    """
    eps = 1e-12
    obj = min(max(float(objectness), eps), 1.0 - eps)
    loss = st_iou_loss(pred_box, gt_box, spike_map, cfg) - math.log(obj)
    if class_logits is not None:
        from .dlnet import softmax_ce

        target = np.zeros(len(class_logits))
        target[class_target] = 1.0
        ce, _ = softmax_ce(class_logits, target)
        loss += ce
    return loss
