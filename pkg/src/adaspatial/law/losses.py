from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor_core import ShapeError, Tensor, expand
from .config import LawConfig
from .denoiser import SurrogateDenoiser
from .schedule import NoiseSchedule, forward_diffuse
from .weights import DeltaNet, WeightMaps, compute_weights, delta_map, modulate, ratio_prior, resize_mask


def weighted_mse(pred: Tensor, target: Tensor, w: Tensor | None = None) -> Tensor:
    """Mean over all elements of ``w * (pred - target)**2``; ``w`` is
    ``[N,1,H,W]`` and is repeated across channels."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    sq = (pred - target) ** 2
    if w is None:
        return sq.mean()
    if w.shape != pred.shape:
        if w.ndim != 4 or w.shape[1] != 1 or w.shape[0] != pred.shape[0] or w.shape[2:] != pred.shape[2:]:
            raise ShapeError(f"weights {w.shape} cannot cover predictions {pred.shape}")
        w = expand(w, pred.shape)
    return (w * sq).mean()


def dice_regularizer(delta: Tensor, m, eps_s: float = 1e-6) -> Tensor:
    """Soft Dice loss between the delta map and the mask, averaged over the batch."""
    m = Tensor(np.asarray(m.data if isinstance(m, Tensor) else m, dtype=np.float64))
    if delta.shape != m.shape:
        raise ShapeError(f"delta {delta.shape} vs mask {m.shape}")
    axes = tuple(range(1, delta.ndim)) if delta.ndim > 2 else None
    inter = (delta * m).sum(axis=axes)
    denom = delta.sum(axis=axes) + m.sum(axis=axes) + eps_s
    return (1.0 - (2.0 * inter + eps_s) / denom).mean()


@dataclass
class LawBatch:
    z0: np.ndarray  # [N,C,H,W]
    m: np.ndarray  # [N,1,H,W]
    t: np.ndarray  # [N] integer steps
    eps: np.ndarray  # [N,C,H,W]


@dataclass
class LossComponents:
    L_S: float
    L_T: float
    L_dist: float
    L_dice: float
    total: float
    coef: dict
    maps: WeightMaps
    delta: Tensor | None
    student_pred: Tensor

    def as_record(self) -> dict:
        w = self.maps.w_final.data
        return {
            "L_S": self.L_S,
            "L_T": self.L_T,
            "L_dist": self.L_dist,
            "L_dice": self.L_dice,
            "total": self.total,
            "w_stats": {"min": float(w.min()), "max": float(w.max()), "mean": float(w.mean())},
        }


def total_loss(batch: LawBatch, student: SurrogateDenoiser, teacher: SurrogateDenoiser,
               phi: DeltaNet | None, cfg: LawConfig, sched: NoiseSchedule,
               stop_grad: bool = True) -> tuple[Tensor, LossComponents]:
    """Student + teacher + distillation + Dice objective.

    With ``stop_grad`` the usual gradient barriers apply: the student
    features read by ``phi`` and the teacher's distillation target are
    constants, and so are the weights unless ``cfg.weight_grad`` is
    ``"through"``.  ``stop_grad=False`` removes every barrier so the scalar
    is an ordinary differentiable function of all parameters.
    """
    z_t = forward_diffuse(batch.z0, batch.t, batch.eps, sched)
    eps = Tensor(batch.eps)
    pred_s = student(z_t, batch.t, batch.m)
    pred_t = teacher(z_t, batch.t, batch.m)

    m_lat = resize_mask(np.asarray(batch.m, dtype=np.float64), *pred_s.shape[2:])
    if cfg.use_ratio:
        w_ratio = ratio_prior(m_lat, fallback=cfg.degenerate_fallback)
    else:
        w_ratio = Tensor(np.ones_like(m_lat))

    delta = None
    if cfg.use_delta and phi is not None:
        feats = pred_s.detach() if stop_grad else pred_s
        delta = delta_map(feats, m_lat, phi, cfg.tau)
        maps = compute_weights(w_ratio, modulate(delta, cfg.gamma), cfg)
    else:
        maps = compute_weights(w_ratio, None, cfg)

    w = maps.w_final
    if stop_grad and cfg.weight_grad == "detached":
        w = w.detach()
    uniform = not cfg.use_ratio and not cfg.use_delta
    loss_s = weighted_mse(pred_s, eps, None if uniform else w)
    loss_t = weighted_mse(pred_t, eps)
    target = pred_t.detach() if stop_grad else pred_t
    loss_d = weighted_mse(pred_s, target, None if uniform else w)

    coef = {"beta_T": cfg.beta_T, "beta_D": cfg.beta_D,
            "lambda_dice": cfg.lambda_dice if (cfg.use_dice and delta is not None) else 0.0}
    total = loss_s + coef["beta_T"] * loss_t + coef["beta_D"] * loss_d
    loss_dice = None
    if delta is not None:
        loss_dice = dice_regularizer(delta, m_lat, cfg.eps_s)
        if coef["lambda_dice"]:
            total = total + coef["lambda_dice"] * loss_dice
    comps = LossComponents(
        L_S=loss_s.item(), L_T=loss_t.item(), L_dist=loss_d.item(),
        L_dice=loss_dice.item() if loss_dice is not None else 0.0,
        total=total.item(), coef=coef, maps=maps, delta=delta, student_pred=pred_s,
    )
    return total, comps
