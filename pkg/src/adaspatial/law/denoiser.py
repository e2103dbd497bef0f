from __future__ import annotations

import numpy as np

from ..tensor_core import Module, Tensor, concat, conv2d, conv_weight, zeros


def timestep_embedding(t, dim: int, T: int) -> np.ndarray:
    """Sinusoidal embedding, one row of ``dim`` values per timestep."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = T ** (-np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class SurrogateDenoiser(Module):
    """Three 3x3 conv layers over ``[z_t; embedding channels; m]``.

    Stands in for the conditioned diffusion backbone; the timestep enters as
    constant broadcast channels.
    """

    def __init__(self, rng: np.random.Generator, latent_channels: int = 1, hidden: int = 16,
                 emb_dim: int = 4, T: int = 100):
        super().__init__()
        self.emb_dim, self.T = emb_dim, T
        cin = latent_channels + emb_dim + 1
        self.w0, self.b0 = conv_weight(rng, hidden, cin, 3), zeros(hidden)
        self.w1, self.b1 = conv_weight(rng, hidden, hidden, 3), zeros(hidden)
        self.w2, self.b2 = conv_weight(rng, latent_channels, hidden, 3, gain=1.0), zeros(latent_channels)

    def __call__(self, z_t: Tensor, t, m: np.ndarray) -> Tensor:
        n, _, h, w = z_t.shape
        emb = timestep_embedding(np.broadcast_to(np.asarray(t), (n,)), self.emb_dim, self.T)
        emb_map = np.broadcast_to(emb[:, :, None, None], (n, self.emb_dim, h, w))
        x = concat([z_t, Tensor(emb_map), Tensor(m)], axis=1)
        x = conv2d(x, self.w0, self.b0, pad=1).relu()
        x = conv2d(x, self.w1, self.b1, pad=1).relu()
        return conv2d(x, self.w2, self.b2, pad=1)
