"""Segmentation training loop with per-epoch validation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..data.dataset import stack
from ..data.synth import SamplePair
from ..metrics import binarize, mean_metrics
from ..rng import stream
from ..tensor_core import Adam, Tensor
from .config import OrderConfig
from .loss import seg_loss
from .network import OrderNetwork


class NonFiniteSegLoss(RuntimeError):
    pass


@dataclass
class SegSettings:
    lr: float = 3e-3
    batch_size: int = 8
    betas: tuple[float, float] = (0.9, 0.999)


@dataclass
class SegRun:
    net: OrderNetwork
    log: list[dict] = field(default_factory=list)


def predict(net: OrderNetwork, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    out = [net(Tensor(images[i:i + batch_size])).data for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, 1) + images.shape[2:])


def evaluate(net: OrderNetwork, pairs: list[SamplePair]) -> dict:
    if not pairs:
        return {"mDice": float("nan"), "mIoU": float("nan"), "n": 0}
    images, masks = stack(pairs)
    probs = predict(net, images)
    return mean_metrics(zip(binarize(probs[:, 0]), masks[:, 0] > 0.5))


def train_seg(train: list[SamplePair], val: list[SamplePair], cfg: OrderConfig,
              settings: SegSettings | None = None, epochs: int = 10, seed: int = 0,
              on_epoch: Callable[[dict], None] | None = None) -> SegRun:
    settings = settings or SegSettings()
    net = OrderNetwork(cfg, seed)
    run = SegRun(net)
    if epochs <= 0 or not train:
        return run
    images, masks = stack(train)
    opt = Adam(net.parameters(), lr=settings.lr, betas=settings.betas)
    order_rng = stream(seed, "data")
    for epoch in range(1, epochs + 1):
        perm = order_rng.permutation(len(images))
        total, batches = 0.0, 0
        for start in range(0, len(perm), settings.batch_size):
            idx = perm[start:start + settings.batch_size]
            loss = seg_loss(net(Tensor(images[idx])), Tensor(masks[idx]))
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteSegLoss(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value
            batches += 1
        row = {"epoch": epoch, "train_loss": total / batches}
        metrics = evaluate(net, val)
        row.update(mDice=metrics["mDice"], mIoU=metrics["mIoU"])
        run.log.append(row)
        if on_epoch:
            on_epoch(row)
    return run
