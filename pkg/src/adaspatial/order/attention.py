"""Bidirectional skip attention with a single shared similarity matrix."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..tensor_core import (
    Module,
    ShapeError,
    Tensor,
    adaptive_pool_matrix,
    concat,
    conv2d,
    conv_weight,
    expand,
    global_avg_pool,
    matmul,
    nearest_matrix,
    sigmoid,
    softmax,
    spatial_map,
    zeros,
)


class BiAttnUnit(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        if channels <= 0:
            raise ShapeError("attention needs a positive head dimension")
        c = channels
        self.channels = c
        self.q_w, self.q_b = conv_weight(rng, c, c, 1, gain=1.0), zeros(c)
        self.k_w, self.k_b = conv_weight(rng, c, c, 1, gain=1.0), zeros(c)
        self.vd_w, self.vd_b = conv_weight(rng, c, c, 1, gain=1.0), zeros(c)
        self.ve_w, self.ve_b = conv_weight(rng, c, c, 1, gain=1.0), zeros(c)
        self.gate_w = Tensor(rng.normal(0.0, 1.0 / math.sqrt(2 * c), size=(2 * c, 1)), requires_grad=True)
        self.gate_b = zeros(1, 1)


@dataclass
class AttnResult:
    d: Tensor
    e: Tensor
    S: Tensor
    c: Tensor


def _tokens(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return x.reshape(n, c, h * w).transpose(0, 2, 1)


def _untokens(t: Tensor, h: int, w: int) -> Tensor:
    n, L, c = t.shape
    return t.transpose(0, 2, 1).reshape(n, c, h, w)


def confidence_gate(d: Tensor, e: Tensor, unit: BiAttnUnit) -> Tensor:
    """Per-sample scalar in (0, 1) from globally pooled decoder/encoder features."""
    n, c = d.shape[:2]
    pooled = concat([global_avg_pool(d).reshape(n, c), global_avg_pool(e).reshape(n, c)], axis=1)
    return sigmoid(matmul(pooled, unit.gate_w) + expand(unit.gate_b, (n, 1)))


def bidir_attention(d: Tensor, e: Tensor, unit: BiAttnUnit, grid: int | None = None,
                    gate_enabled: bool = True, force_gate: float | None = None) -> AttnResult:
    """Update decoder and encoder streams from one similarity matrix.

    ``S = Q_d K_e^T / sqrt(C)`` is built once; its row softmax pulls encoder
    values into the decoder and the row softmax of ``S^T`` pulls decoder
    values into the encoder.  Stages wider than ``grid`` are average-pooled
    to a ``grid x grid`` token map first and the updates are copied back with
    nearest-neighbour resampling.
    """
    if d.shape != e.shape:
        raise ShapeError(f"decoder {d.shape} and encoder {e.shape} features are not aligned")
    n, c, h, w = d.shape
    if c != unit.channels:
        raise ShapeError(f"attention unit has {unit.channels} channels, features have {c}")

    gh, gw = h, w
    dp, ep = d, e
    if grid is not None and (h > grid or w > grid):
        gh, gw = min(h, grid), min(w, grid)
        ph, pw = adaptive_pool_matrix(h, gh), adaptive_pool_matrix(w, gw)
        dp, ep = spatial_map(d, ph, pw), spatial_map(e, ph, pw)

    q = _tokens(conv2d(dp, unit.q_w, unit.q_b))
    k = _tokens(conv2d(ep, unit.k_w, unit.k_b))
    v_d = _tokens(conv2d(dp, unit.vd_w, unit.vd_b))
    v_e = _tokens(conv2d(ep, unit.ve_w, unit.ve_b))

    S = matmul(q, k.transpose(0, 2, 1)) * (1.0 / math.sqrt(c))
    delta_d = _untokens(matmul(softmax(S), v_e), gh, gw)
    delta_e = _untokens(matmul(softmax(S.transpose(0, 2, 1)), v_d), gh, gw)
    if (gh, gw) != (h, w):
        uh, uw = nearest_matrix(gh, h), nearest_matrix(gw, w)
        delta_d, delta_e = spatial_map(delta_d, uh, uw), spatial_map(delta_e, uh, uw)

    if force_gate is not None:
        cval = Tensor(np.full((n, 1), float(force_gate)))
    elif gate_enabled:
        cval = confidence_gate(d, e, unit)
    else:
        cval = Tensor(np.ones((n, 1)))
    cmap = expand(cval.reshape(n, 1, 1, 1), d.shape)
    return AttnResult(d + cmap * delta_d, e + cmap * delta_e, S, cval)


def fuse_skip(d: Tensor, e: Tensor) -> Tensor:
    if d.shape != e.shape:
        raise ShapeError(f"cannot fuse {d.shape} with {e.shape}")
    return d + e
