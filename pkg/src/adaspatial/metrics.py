"""Per-image overlap metrics on binary masks."""
from __future__ import annotations

import numpy as np

THRESHOLD = 0.5


def binarize(prob, threshold: float = THRESHOLD) -> np.ndarray:
    return np.asarray(prob) > threshold


def _check(pred, gt):
    p, g = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ")
    return p, g


def dice_score(pred_bin, gt) -> float:
    p, g = _check(pred_bin, gt)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def iou_score(pred_bin, gt) -> float:
    p, g = _check(pred_bin, gt)
    union = int((p | g).sum())
    if union == 0:
        return 1.0
    return int((p & g).sum()) / union


def mean_metrics(pairs) -> dict:
    """Average per-image Dice and IoU over ``(pred_bin, gt)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        return {"mDice": float("nan"), "mIoU": float("nan"), "n": 0}
    dice = [dice_score(p, g) for p, g in pairs]
    iou = [iou_score(p, g) for p, g in pairs]
    return {"mDice": float(np.mean(dice)), "mIoU": float(np.mean(iou)), "n": len(pairs)}
