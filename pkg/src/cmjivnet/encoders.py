"""Modality-specific convolutional variational encoders.

Each encoder treats a 68x68 connectome as a one-channel image, applies
three conv(3x3) -> batchnorm -> ReLU -> maxpool(2x2) blocks with 32/64/128
channels (spatial trace 68 -> 34 -> 17 -> 8), flattens the 128*8*8 = 8192
features, and emits a 64-dim diagonal-Gaussian posterior through two affine
heads. The FC and SC encoders share this layout but never share weights.
Batchnorm is included for stability even though the baseline block is
plain conv/ReLU/pool. Log-variances are clamped to [-10, 10].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor

D_Z = 64
INPUT_SIZE = 68
FLAT_DIM = 128 * 8 * 8
LOGVAR_LIMIT = 10.0


@dataclass
class GaussianLatent:
    """Batched diagonal Gaussian: mu and logvar of shape (B, d_z)."""

    mu: Tensor
    logvar: Tensor

    @property
    def d(self) -> int:
        return self.mu.shape[-1]


class ConvEncoder(nn.Module):
    def __init__(self, rng: np.random.Generator, d_z: int = D_Z):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 32, rng)
        self.bn1 = nn.BatchNorm2d(32)
        self.conv2 = nn.Conv2d(32, 64, rng)
        self.bn2 = nn.BatchNorm2d(64)
        self.conv3 = nn.Conv2d(64, 128, rng)
        self.bn3 = nn.BatchNorm2d(128)
        self.head_mu = nn.Linear(FLAT_DIM, d_z, rng)
        self.head_logvar = nn.Linear(FLAT_DIM, d_z, rng)

    def __call__(self, x: Tensor) -> GaussianLatent:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (INPUT_SIZE, INPUT_SIZE):
            raise ShapeError(
                f"encoder expects (B, 1, {INPUT_SIZE}, {INPUT_SIZE}) input, got {tuple(x.shape)}")
        h = ad.maxpool2d(ad.relu(self.bn1(self.conv1(x))))
        h = ad.maxpool2d(ad.relu(self.bn2(self.conv2(h))))
        h = ad.maxpool2d(ad.relu(self.bn3(self.conv3(h))))
        flat = ad.flatten(h)
        mu = self.head_mu(flat)
        logvar = ad.clip(self.head_logvar(flat), -LOGVAR_LIMIT, LOGVAR_LIMIT)
        return GaussianLatent(mu=mu, logvar=logvar)


def reparameterize(g: GaussianLatent, noise: np.ndarray) -> Tensor:
    """z = mu + exp(logvar / 2) * noise, differentiable in mu and logvar."""
    if tuple(noise.shape) != tuple(g.mu.shape):
        raise ShapeError(f"noise shape {noise.shape} != posterior shape {tuple(g.mu.shape)}")
    std = ad.exp(ad.mul(g.logvar, 0.5))
    return ad.add(g.mu, ad.mul(std, Tensor(noise.astype(g.mu.dtype, copy=False))))
