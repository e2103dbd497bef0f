from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..rng import stream
from ..tensor_core import (
    Module,
    ShapeError,
    Tensor,
    conv2d,
    conv_weight,
    maxpool2x2,
    sigmoid,
    upsample_nearest,
    zeros,
)
from .attention import AttnResult, BiAttnUnit, bidir_attention, fuse_skip
from .blocks import MkirBlock
from .config import NUM_STAGES, OrderConfig


class Conv1x1(Module):
    def __init__(self, ci: int, co: int, rng: np.random.Generator, gain: float = 2.0):
        super().__init__()
        self.w = conv_weight(rng, co, ci, 1, gain=gain)
        self.b = zeros(co)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b)


class OrderNetwork(Module):
    """MK-UNet backbone with optional bidirectional attention on chosen skips.

    Stage 0 is the full-resolution stage and stage 4 the bottleneck.  The
    decoder walks from stage 4 down to 0; at each stage the upsampled decoder
    state is fused with the encoder feature of the same stage, either by
    addition or through a :class:`BiAttnUnit`, and then refined by an MKIR
    block (stages 1..4).  The stage-0 fusion feeds the 1x1 sigmoid head.

    Backbone parameters are drawn before the attention units, so networks
    built from one seed share identical backbone weights whatever
    ``attn_stages`` is.
    """

    def __init__(self, cfg: OrderConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        rng = stream(seed, "init")
        self.stem_w = conv_weight(rng, ch[0], cfg.in_channels, 3)
        self.stem_b = zeros(ch[0])
        for i in range(NUM_STAGES):
            if i > 0:
                setattr(self, f"down{i}", Conv1x1(ch[i - 1], ch[i], rng, gain=1.0))
            setattr(self, f"enc{i}", MkirBlock(ch[i], rng))
        for i in range(NUM_STAGES - 1, -1, -1):
            if i < NUM_STAGES - 1:
                setattr(self, f"up{i}", Conv1x1(ch[i + 1], ch[i], rng, gain=1.0))
            if i > 0:
                setattr(self, f"dec{i}", MkirBlock(ch[i], rng))
        self.head = Conv1x1(ch[0], 1, rng, gain=1.0)
        attn_rng = stream(seed, "init-attn")
        for i in range(NUM_STAGES):
            unit = BiAttnUnit(ch[i], attn_rng)
            if i in cfg.attn_stages:
                setattr(self, f"attn{i}", unit)

    def attention_units(self) -> dict[int, BiAttnUnit]:
        return {i: getattr(self, f"attn{i}") for i in self.cfg.attn_stages}

    def backbone_state(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.state_dict().items() if not k.startswith("attn")}

    def forward(self, x: Tensor, force_gate: float | None = None,
                trace: dict | None = None) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"expected [N,{cfg.in_channels},H,W] input, got {x.shape}")
        h, w = x.shape[2:]
        if h % 16 or w % 16:
            raise ShapeError(f"input {h}x{w} is not divisible by 16")

        skips = []
        f = conv2d(x, self.stem_w, self.stem_b, pad=1).relu()
        for i in range(NUM_STAGES):
            if i > 0:
                f = getattr(self, f"down{i}")(maxpool2x2(f))
            f = getattr(self, f"enc{i}")(f)
            skips.append(f)

        d = skips[-1]
        for i in range(NUM_STAGES - 1, -1, -1):
            if i < NUM_STAGES - 1:
                # a 1x1 conv commutes with nearest upsampling; converting
                # channels first is the cheaper order
                d = upsample_nearest(getattr(self, f"up{i}")(d))
            e = skips[i]
            if i in cfg.attn_stages:
                res: AttnResult = bidir_attention(
                    d, e, getattr(self, f"attn{i}"), grid=cfg.attn_grid,
                    gate_enabled=cfg.gate_enabled, force_gate=force_gate)
                if trace is not None:
                    trace[i] = res
                d = fuse_skip(res.d, res.e)
            else:
                d = fuse_skip(d, e)
            if i > 0:
                d = getattr(self, f"dec{i}")(d)
        return sigmoid(self.head(d))

    __call__ = forward


def build_mkunet(cfg: OrderConfig, seed: int = 0) -> OrderNetwork:
    """Plain MK-UNet: the same backbone with every skip fused by addition."""
    return OrderNetwork(replace(cfg, attn_stages=()), seed)
