from __future__ import annotations

from ..tensor_core import ShapeError, Tensor, clamp

PROB_FLOOR = 1e-7
DICE_EPS = 1e-6


def seg_loss(pred: Tensor, target: Tensor, eps: float = DICE_EPS) -> Tensor:
    """Binary cross-entropy plus soft Dice loss averaged over the batch.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` for the log terms only;
    the Dice term sees the raw prediction map.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    p = clamp(pred, PROB_FLOOR, 1.0 - PROB_FLOOR)
    bce = -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()
    n = pred.shape[0]
    axes = tuple(range(1, pred.ndim))
    inter = (pred * target).sum(axis=axes)
    denom = pred.sum(axis=axes) + target.sum(axis=axes)
    dice = 1.0 - (inter * 2.0 + eps) / (denom + eps)
    return bce + dice.sum() * (1.0 / n)
