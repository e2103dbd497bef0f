"""Training loops for the LAW objective and its uniform-weight baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..data.synth import SamplePair
from ..metrics import binarize, dice_score
from ..rng import stream
from ..tensor_core import Adam, NonFiniteError, Tensor
from .config import LawConfig
from .denoiser import SurrogateDenoiser
from .losses import LawBatch, total_loss
from .schedule import NoiseSchedule, forward_diffuse
from .weights import DeltaNet, delta_map


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class OptimSettings:
    lr: float = 1e-3
    batch_size: int = 4
    betas: tuple[float, float] = (0.9, 0.999)


@dataclass
class LawRun:
    student: SurrogateDenoiser
    teacher: SurrogateDenoiser
    phi: DeltaNet | None
    log: list[dict] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    probe_masks: np.ndarray | None = None


def latents(pairs: list[SamplePair]) -> tuple[np.ndarray, np.ndarray]:
    """Images mapped to [-1, 1] serve directly as one-channel latents."""
    z0 = np.stack([2.0 * p.image.mean(axis=0, keepdims=True) - 1.0 for p in pairs])
    m = np.stack([p.mask for p in pairs])
    return z0, m


def build_models(seed: int, cfg: LawConfig, T: int, student_hidden: int = 16,
                 latent_channels: int = 1, with_phi: bool = True):
    rng = stream(seed, "init")
    student = SurrogateDenoiser(rng, latent_channels, student_hidden, T=T)
    teacher = SurrogateDenoiser(rng, latent_channels, 2 * student_hidden, T=T)
    phi = DeltaNet(latent_channels + 1, rng, cfg.phi_hidden, cfg.phi_layers) if with_phi else None
    return student, teacher, phi


def _sample(z0, m, data_rng, noise_rng, batch_size: int, T: int) -> LawBatch:
    idx = data_rng.choice(len(z0), size=min(batch_size, len(z0)), replace=False)
    t = noise_rng.integers(0, T, size=idx.size)
    eps = noise_rng.normal(size=z0[idx].shape)
    return LawBatch(z0[idx], m[idx], t, eps)


def probe_batch(z0, m, seed: int, T: int, count: int = 4) -> LawBatch:
    n = min(count, len(z0))
    eps = stream(seed, "probe").normal(size=z0[:n].shape)
    return LawBatch(z0[:n], m[:n], np.full(n, T // 2), eps)


def probe_delta(student, phi, batch: LawBatch, cfg: LawConfig, sched: NoiseSchedule) -> np.ndarray:
    z_t = forward_diffuse(batch.z0, batch.t, batch.eps, sched)
    feats = student(z_t, batch.t, batch.m).detach()
    return delta_map(feats, batch.m, phi, cfg.tau).data[:, 0].copy()


def train_law(pairs: list[SamplePair], cfg: LawConfig, sched: NoiseSchedule,
              opt: OptimSettings | None = None, steps: int = 200, seed: int = 0,
              snapshot_steps=(), student_hidden: int = 16,
              on_step: Callable[[dict], None] | None = None) -> LawRun:
    """Optimise student, teacher and delta network jointly.

    ``snapshots[s]`` holds the probe-batch delta maps after ``s`` updates.
    """
    opt = opt or OptimSettings()
    z0, m = latents(pairs)
    student, teacher, phi = build_models(seed, cfg, sched.T, student_hidden, z0.shape[1])
    params = student.parameters() + teacher.parameters() + phi.parameters()
    adam = Adam(params, lr=opt.lr, betas=opt.betas)
    data_rng, noise_rng = stream(seed, "data"), stream(seed, "noise")
    probe = probe_batch(z0, m, seed, sched.T)
    run = LawRun(student, teacher, phi, probe_masks=probe.m[:, 0].copy())
    snapshot_steps = set(snapshot_steps)

    for step in range(steps + 1):
        if step in snapshot_steps:
            run.snapshots[step] = probe_delta(student, phi, probe, cfg, sched)
        if step == steps:
            break
        batch = _sample(z0, m, data_rng, noise_rng, opt.batch_size, sched.T)
        try:
            loss, comps = total_loss(batch, student, teacher, phi, cfg, sched)
        except NonFiniteError as exc:
            raise NonFiniteLossError(f"non-finite value at step {step}: {exc}",
                                     {"step": step, "last": run.log[-1] if run.log else None}) from exc
        record = {"step": step, **comps.as_record()}
        if not math.isfinite(record["total"]):
            raise NonFiniteLossError(f"non-finite loss at step {step}", record)
        adam.zero_grad()
        loss.backward()
        adam.step()
        run.log.append(record)
        if on_step is not None:
            on_step(record)
    return run


def train_uniform_baseline(pairs: list[SamplePair], cfg: LawConfig, sched: NoiseSchedule,
                           opt: OptimSettings | None = None, steps: int = 200, seed: int = 0,
                           student_hidden: int = 16) -> LawRun:
    """Plain MSE training of the same student/teacher pair, no weighting code
    involved.  Shares every random stream with :func:`train_law`."""
    opt = opt or OptimSettings()
    z0, m = latents(pairs)
    student, teacher, _ = build_models(seed, cfg, sched.T, student_hidden, z0.shape[1], with_phi=False)
    adam = Adam(student.parameters() + teacher.parameters(), lr=opt.lr, betas=opt.betas)
    data_rng, noise_rng = stream(seed, "data"), stream(seed, "noise")
    run = LawRun(student, teacher, None)
    for step in range(steps):
        b = _sample(z0, m, data_rng, noise_rng, opt.batch_size, sched.T)
        z_t = forward_diffuse(b.z0, b.t, b.eps, sched)
        eps = Tensor(b.eps)
        ps, pt = student(z_t, b.t, b.m), teacher(z_t, b.t, b.m)
        l_s = ((ps - eps) ** 2).mean()
        l_t = ((pt - eps) ** 2).mean()
        l_d = ((ps - pt.detach()) ** 2).mean()
        total = l_s + cfg.beta_T * l_t + cfg.beta_D * l_d
        adam.zero_grad()
        total.backward()
        adam.step()
        run.log.append({"step": step, "L_S": l_s.item(), "L_T": l_t.item(), "L_dist": l_d.item(),
                        "L_dice": 0.0, "total": total.item()})
    return run


def region_mse(student: SurrogateDenoiser, pairs: list[SamplePair], sched: NoiseSchedule,
               seed: int = 12345, repeats: int = 4) -> dict:
    """Noise-prediction MSE split by lesion / background pixels on fixed draws."""
    z0, m = latents(pairs)
    rng = stream(seed, "eval")
    les = bg = 0.0
    n_les = n_bg = 0.0
    for _ in range(repeats):
        t = rng.integers(0, sched.T, size=len(z0))
        eps = rng.normal(size=z0.shape)
        pred = student(forward_diffuse(z0, t, eps, sched), t, m).data
        err = ((pred - eps) ** 2).mean(axis=1, keepdims=True)
        les += float((err * m).sum())
        bg += float((err * (1 - m)).sum())
        n_les += float(m.sum())
        n_bg += float((1 - m).sum())
    return {"lesion": les / max(n_les, 1.0), "background": bg / max(n_bg, 1.0)}


def delta_alignment(delta: np.ndarray, masks: np.ndarray) -> float:
    """Mean per-image Dice between thresholded delta maps and masks."""
    return float(np.mean([dice_score(binarize(d), g) for d, g in zip(delta, masks)]))
