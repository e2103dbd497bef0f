"""Per-pixel loss weights: ratio prior, learned delta map, stabilisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor_core import (
    Module,
    ShapeError,
    Tensor,
    clamp,
    concat,
    conv2d,
    conv_weight,
    expand,
    nearest_matrix,
    sigmoid,
    spatial_map,
    zeros,
)
from .config import LawConfig


class DegenerateWeightsError(ValueError):
    pass


def _mask_array(m) -> np.ndarray:
    arr = np.asarray(m.data if isinstance(m, Tensor) else m, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("mask values must lie in [0, 1]")
    return arr


def ratio_prior(m, fallback: bool = True) -> Tensor:
    """``m * (1 - r) + (1 - m) * r`` with ``r`` the per-sample lesion fraction.

    Masks with ``r`` of exactly 0 or 1 would give an all-zero map; with
    ``fallback`` they get uniform weight 1 instead.
    """
    m = _mask_array(m)
    r = m.mean(axis=(1, 2, 3), keepdims=True)
    w = m * (1.0 - r) + (1.0 - m) * r
    if fallback:
        degenerate = (r == 0.0) | (r == 1.0)
        w = np.where(degenerate, 1.0, w)
    return Tensor(w)


def resize_mask(m: np.ndarray, h: int, w: int) -> np.ndarray:
    if m.shape[-2:] == (h, w):
        return m
    mh, mw = nearest_matrix(m.shape[-2], h), nearest_matrix(m.shape[-1], w)
    return np.einsum("ih,nchw,jw->ncij", mh, m, mw)


class DeltaNet(Module):
    """Small conv stack mapping ``[f_t; m]`` to a one-channel logit map."""

    def __init__(self, in_channels: int, rng: np.random.Generator, hidden: int = 32,
                 layers: int = 3, zero_last: bool = True):
        super().__init__()
        self.layers = layers
        chans = [in_channels] + [hidden] * (layers - 1) + [1]
        for i in range(layers):
            w = conv_weight(rng, chans[i + 1], chans[i], 3)
            if zero_last and i == layers - 1:
                w.data[...] = 0.0
            setattr(self, f"w{i}", w)
            setattr(self, f"b{i}", zeros(chans[i + 1]))

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(self.layers):
            x = conv2d(x, getattr(self, f"w{i}"), getattr(self, f"b{i}"), pad=1)
            if i < self.layers - 1:
                x = x.relu()
        return x


def delta_map(f_t: Tensor, m, phi: DeltaNet, tau: float) -> Tensor:
    """``sigmoid(phi([f_t; m]) / tau)``; the mask is resized to ``f_t``."""
    marr = _mask_array(m)
    if marr.shape[0] != f_t.shape[0]:
        raise ShapeError(f"batch mismatch: features {f_t.shape[0]}, mask {marr.shape[0]}")
    marr = resize_mask(marr, *f_t.shape[2:])
    logits = phi(concat([f_t, Tensor(marr)], axis=1))
    if logits.shape[2:] != marr.shape[2:]:
        raise ShapeError(f"delta map {logits.shape[2:]} vs mask {marr.shape[2:]}")
    return sigmoid(logits * (1.0 / tau))


def modulate(delta: Tensor, gamma: float) -> Tensor:
    return 1.0 + gamma * (2.0 * delta - 1.0)


@dataclass
class WeightMaps:
    w_ratio: Tensor
    mu: Tensor | None
    w_adapt: Tensor
    w_norm: Tensor  # after normalisation, before clamping
    w_final: Tensor


def compute_weights(w_ratio: Tensor, mu: Tensor | None, cfg: LawConfig) -> WeightMaps:
    """Run the modulate / normalise / clamp chain, honouring ablation toggles.

    With ``use_delta`` off the prior is returned untouched.
    """
    if not cfg.use_delta or mu is None:
        return WeightMaps(w_ratio, None, w_ratio, w_ratio, w_ratio)
    if mu.shape != w_ratio.shape:
        raise ShapeError(f"prior {w_ratio.shape} vs multiplier {mu.shape}")
    w_adapt = w_ratio * mu
    w_norm = w_adapt
    if cfg.use_norm:
        axes = (0, 1, 2, 3) if cfg.norm_scope == "batch" else (1, 2, 3)
        mean = w_adapt.mean(axis=axes, keepdims=True)
        if np.any(mean.data <= 0.0):
            raise DegenerateWeightsError("adaptive weights have zero mean; cannot normalise")
        w_norm = w_adapt / expand(mean, w_adapt.shape)
    lo = cfg.w_min if cfg.use_min_clamp else None
    hi = cfg.w_max if cfg.use_max_clamp else None
    w_final = clamp(w_norm, lo, hi) if (lo is not None or hi is not None) else w_norm
    return WeightMaps(w_ratio, mu, w_adapt, w_norm, w_final)


def finalize_weights(w_ratio: Tensor, mu: Tensor | None, cfg: LawConfig) -> Tensor:
    return compute_weights(w_ratio, mu, cfg).w_final
