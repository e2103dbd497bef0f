"""Synthetic, spatially imbalanced image/mask pairs.

Lesions are unions of one to three rotated ellipses.  The lesion pixel count
is fixed exactly by keeping the top-k pixels of a smoothed ellipse field, so
the realised area ratio always lands inside the requested band.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SamplePair:
    image: np.ndarray  # [C, H, W] in [0, 1]
    mask: np.ndarray  # [1, H, W] in {0, 1}
    id: str

    @property
    def ratio(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class SynthSpec:
    size: int = 64
    ratio_range: tuple[float, float] = (0.02, 0.10)
    blob_range: tuple[int, int] = (1, 3)
    contrast: float = 0.25
    noise: float = 0.05
    channels: int = 1
    seed: int = 0
    require_divisible: bool = field(default=True, compare=False)

    def validate(self) -> None:
        lo, hi = self.ratio_range
        if not (0.0 < lo <= hi < 1.0):
            raise SpecError(f"ratio range {self.ratio_range} must satisfy 0 < lo <= hi < 1")
        if self.size <= 0 or (self.require_divisible and self.size % 16):
            raise SpecError(f"size {self.size} must be a positive multiple of 16")
        if not (1 <= self.blob_range[0] <= self.blob_range[1]):
            raise SpecError(f"bad blob range {self.blob_range}")
        if self.channels not in (1, 3):
            raise SpecError("channels must be 1 or 3")


def _lesion_count(spec: SynthSpec, rng: np.random.Generator) -> int:
    n = spec.size * spec.size
    lo, hi = spec.ratio_range
    kmin = max(1, math.ceil(lo * n - 1e-9))
    kmax = min(n - 1, math.floor(hi * n + 1e-9))
    if kmin > kmax:
        raise SpecError(f"ratio range {spec.ratio_range} unreachable on a {spec.size}x{spec.size} grid")
    k = int(round(rng.uniform(lo, hi) * n))
    return min(max(k, kmin), kmax)


def _ellipse_field(size: int, k: int, nblobs: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    fld = np.full((size, size), -np.inf)
    for _ in range(nblobs):
        area = k / nblobs
        aspect = rng.uniform(0.5, 2.0)
        a = max(math.sqrt(area * aspect / math.pi), 0.5)
        b = max(math.sqrt(area / (aspect * math.pi)), 0.5)
        margin = min(max(a, b), size / 2 - 1)
        cy, cx = rng.uniform(margin, size - margin, size=2)
        theta = rng.uniform(0, math.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * math.cos(theta) + dy * math.sin(theta)
        v = -dx * math.sin(theta) + dy * math.cos(theta)
        fld = np.maximum(fld, 1.0 - (u / a) ** 2 - (v / b) ** 2)
    fld = gaussian_filter(np.maximum(fld, -4.0), sigma=max(size / 64.0, 0.5))
    return fld + 1e-9 * rng.random((size, size))  # deterministic tie-break


def _texture(size: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    t = gaussian_filter(rng.normal(size=(size, size)), sigma=sigma)
    return t / (t.std() + 1e-12)


def gen_pair(spec: SynthSpec, index: int) -> SamplePair:
    """Deterministic pure function of ``(spec, index)``."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, index, 0x5EED])
    size = spec.size
    k = _lesion_count(spec, rng)
    nblobs = int(rng.integers(spec.blob_range[0], spec.blob_range[1] + 1))
    fld = _ellipse_field(size, k, nblobs, rng)
    mask = np.zeros(size * size)
    mask[np.argsort(-fld, axis=None, kind="stable")[:k]] = 1.0
    mask = mask.reshape(size, size)

    background = 0.45 + 0.08 * _texture(size, size / 8.0, rng) + 0.03 * _texture(size, 1.0, rng)
    soft = gaussian_filter(mask, sigma=0.7)
    lesion = spec.contrast * soft * (1.0 + 0.3 * _texture(size, 1.5, rng))
    base = background + lesion
    if spec.channels == 3:
        tint = np.array([1.0, 0.85, 0.7])[:, None, None]
        img = base[None] * tint + spec.noise * rng.normal(size=(3, size, size))
    else:
        img = base[None] + spec.noise * rng.normal(size=(1, size, size))
    return SamplePair(np.clip(img, 0.0, 1.0), mask[None], f"synth-{spec.seed}-{index:05d}")


def gen_dataset(spec: SynthSpec, count: int, start: int = 0) -> list[SamplePair]:
    return [gen_pair(spec, i) for i in range(start, start + count)]
