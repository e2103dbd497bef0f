from __future__ import annotations

import numpy as np

from ..tensor_core import Module, ShapeError, Tensor, conv2d, conv_weight, dwconv2d, zeros

KERNELS = (1, 3, 5)


class MkirBlock(Module):
    """Multi-kernel inverted residual block.

    ``x + proj(sum_k relu(dw_k(relu(expand(x)))))`` with a x2 pointwise
    expansion and depthwise kernels 1, 3 and 5.  The depthwise convs carry
    no bias; the three branch biases would only add up to one constant.
    """

    def __init__(self, channels: int, rng: np.random.Generator, expansion: int = 2):
        super().__init__()
        self.channels = channels
        hidden = expansion * channels
        self.expand_w, self.expand_b = conv_weight(rng, hidden, channels, 1), zeros(hidden)
        for k in KERNELS:
            setattr(self, f"dw{k}", conv_weight(rng, hidden, 1, k))
        # zero projection: every block starts as the identity, which keeps
        # activations bounded in a deep unnormalised stack
        self.proj_w = zeros(channels, hidden, 1, 1)
        self.proj_b = zeros(channels)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"MKIR block expects {self.channels} channels, got shape {x.shape}")
        h = conv2d(x, self.expand_w, self.expand_b).relu()
        acc = None
        for k in KERNELS:
            branch = dwconv2d(h, getattr(self, f"dw{k}")).relu()
            acc = branch if acc is None else acc + branch
        return x + conv2d(acc, self.proj_w, self.proj_b)


mkir_forward = MkirBlock.__call__
