from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor_core import Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size == 0:
            raise ValueError("alpha_bar must be a non-empty 1-D array")
        if np.any(ab <= 0) or np.any(ab > 1) or np.any(np.diff(ab) > 0):
            raise ValueError("alpha_bar must lie in (0, 1] and be non-increasing")
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.alpha_bar.size

    @classmethod
    def linear(cls, T: int = 100, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, T)
        return cls(np.cumprod(1.0 - betas))


def forward_diffuse(z0, t, eps, sched: NoiseSchedule) -> Tensor:
    """Noised latent ``sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps``.

    ``t`` is a step index or one index per batch element.
    """
    z0 = np.asarray(z0.data if isinstance(z0, Tensor) else z0, dtype=np.float64)
    eps = np.asarray(eps.data if isinstance(eps, Tensor) else eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"z0 {z0.shape} and eps {eps.shape} differ")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= sched.T):
        raise IndexError(f"timestep out of range [0, {sched.T})")
    ab = sched.alpha_bar[t]
    if ab.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (z0.ndim - 1))
    return Tensor(np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps)
