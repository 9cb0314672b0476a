"""Modality-specific decoders in two interchangeable variants.

The image variants treat the connectome as a picture: the FC decoder
projects the 128-dim latent to a 64x17x17 map, refines it with two
residual blocks, upsamples 17 -> 34 -> 68 with transposed convolutions,
and finishes with a tanh conv; the SC decoder is an MLP whose softplus
output is the Poisson rate image. The bilinear variants follow the
likelihood formulation instead: a network maps the latent to V node
embeddings and each edge gets a weighted inner product of its endpoint
rows plus a per-edge bias (identity link + learned scale for FC,
exponential link for SC rates).

Every decoder exposes ``edges`` (B, D) and ``matrix`` (B, V, V); outputs
are exactly symmetric with zero diagonal, FC entries stay inside (-1, 1),
and SC rates are strictly positive off the diagonal.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor

V_NODES = 68
LATENT_FULL = 128
EMBED_CHANNELS = 16   # R_F = R_S
MLP_HIDDEN = 192

FC_CONV = "fc_conv"
SC_MLP = "sc_mlp"
FC_BILINEAR = "fc_bilinear"
SC_BILINEAR = "sc_bilinear"

IMAGE_VARIANT = "image"
BILINEAR_VARIANT = "bilinear"
DECODER_VARIANTS = (IMAGE_VARIANT, BILINEAR_VARIANT)


def _tril_flat_indices(v: int) -> np.ndarray:
    iu, iv = np.tril_indices(v, k=-1)
    return (iu * v + iv).astype(np.intp)


def _check_latent(z: Tensor) -> None:
    if z.ndim != 2 or z.shape[1] != LATENT_FULL:
        raise ShapeError(f"decoder expects (B, {LATENT_FULL}) latents, got {tuple(z.shape)}")


def matrix_to_edges(m: Tensor, v: int = V_NODES) -> Tensor:
    """Strict lower-triangle edge values of a (B, V, V) tensor, differentiably."""
    b = m.shape[0]
    flat = ad.reshape(m, (b, v * v))
    return ad.take(flat, _tril_flat_indices(v), axis=1)


def _symmetrize_zero_diag(m: Tensor, v: int) -> Tensor:
    sym = ad.mul(ad.add(m, ad.transpose(m, (0, 2, 1))), 0.5)
    mask = (1.0 - np.eye(v)).astype(sym.dtype)[None]
    return ad.mul(sym, Tensor(mask))


class ResidualBlock(nn.Module):
    """conv-bn-relu-conv-bn plus skip, relu after the sum."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, rng)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, rng)
        self.bn2 = nn.BatchNorm2d(channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return ad.relu(ad.add(h, x))


class FcConvDecoder(nn.Module):
    """128 -> (64,17,17) -> (32,34,34) -> (16,68,68) -> (1,68,68), tanh."""

    def __init__(self, rng: np.random.Generator, v: int = V_NODES):
        super().__init__()
        self.v = v
        self.proj = nn.Linear(LATENT_FULL, 64 * 17 * 17, rng)
        self.res1 = ResidualBlock(64, rng)
        self.res2 = ResidualBlock(64, rng)
        self.up1 = nn.ConvTranspose2d(64, 32, rng)
        self.bn1 = nn.BatchNorm2d(32)
        self.up2 = nn.ConvTranspose2d(32, 16, rng)
        self.bn2 = nn.BatchNorm2d(16)
        self.out = nn.Conv2d(16, 1, rng)

    def matrix(self, z: Tensor) -> Tensor:
        _check_latent(z)
        b = z.shape[0]
        h = ad.reshape(self.proj(z), (b, 64, 17, 17))
        h = self.res2(self.res1(h))
        h = ad.relu(self.bn1(self.up1(h)))
        h = ad.relu(self.bn2(self.up2(h)))
        img = ad.tanh(self.out(h))
        return _symmetrize_zero_diag(ad.reshape(img, (b, self.v, self.v)), self.v)

    def edges(self, z: Tensor) -> Tensor:
        return matrix_to_edges(self.matrix(z), self.v)


class ScMlpDecoder(nn.Module):
    """Two hidden affine+ReLU layers, affine to V*V, softplus rates."""

    def __init__(self, rng: np.random.Generator, v: int = V_NODES,
                 hidden: int = MLP_HIDDEN):
        super().__init__()
        self.v = v
        self.fc1 = nn.Linear(LATENT_FULL, hidden, rng)
        self.fc2 = nn.Linear(hidden, hidden, rng)
        self.out = nn.Linear(hidden, v * v, rng)

    def matrix(self, z: Tensor) -> Tensor:
        _check_latent(z)
        b = z.shape[0]
        h = ad.relu(self.fc1(z))
        h = ad.relu(self.fc2(h))
        rates = ad.softplus(self.out(h))
        return _symmetrize_zero_diag(ad.reshape(rates, (b, self.v, self.v)), self.v)

    def edges(self, z: Tensor) -> Tensor:
        return matrix_to_edges(self.matrix(z), self.v)


class _ResidualMlp(nn.Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim, rng)
        self.fc2 = nn.Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(x, self.fc2(ad.relu(self.fc1(x))))


class BilinearFcDecoder(nn.Module):
    """Per-edge mean b_l + sum_r alpha_r X[u(l),r] X[v(l),r], with alpha >= 0
    via softplus and a learnable output scale sigma (reporting only)."""

    def __init__(self, rng: np.random.Generator, v: int = V_NODES,
                 r: int = EMBED_CHANNELS):
        super().__init__()
        self.v = v
        self.r = r
        d = v * (v - 1) // 2
        self.block = _ResidualMlp(LATENT_FULL, rng)
        self.embed = nn.Linear(LATENT_FULL, v * r, rng)
        self.edge_bias = nn.zeros_param((d,))
        self.alpha_raw = nn.zeros_param((r,))
        self.log_sigma = nn.zeros_param(())
        iu, iv = np.tril_indices(v, k=-1)
        self.iu, self.iv = iu.astype(np.intp), iv.astype(np.intp)

    def edges(self, z: Tensor) -> Tensor:
        _check_latent(z)
        b = z.shape[0]
        emb = ad.reshape(self.embed(self.block(z)), (b, self.v, self.r))
        xu = ad.take(emb, self.iu, axis=1)
        xv = ad.take(emb, self.iv, axis=1)
        alpha = ad.reshape(ad.softplus(self.alpha_raw), (1, 1, self.r))
        quad = ad.sum_(ad.mul(ad.mul(xu, xv), alpha), axis=2)
        return ad.add(quad, ad.reshape(self.edge_bias, (1, -1)))

    def matrix(self, z: Tensor) -> Tensor:
        return ad.sym_from_edges(self.edges(z), self.v)

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma.data))


class BilinearScDecoder(nn.Module):
    """Per-edge rate exp(gamma_l + sum_r alpha_r X[u,r] X[v,r]), alpha >= 0."""

    def __init__(self, rng: np.random.Generator, v: int = V_NODES,
                 r: int = EMBED_CHANNELS, hidden: int = MLP_HIDDEN):
        super().__init__()
        self.v = v
        self.r = r
        d = v * (v - 1) // 2
        self.fc1 = nn.Linear(LATENT_FULL, hidden, rng)
        self.embed = nn.Linear(hidden, v * r, rng)
        self.edge_bias = nn.zeros_param((d,))
        self.alpha_raw = nn.zeros_param((r,))
        iu, iv = np.tril_indices(v, k=-1)
        self.iu, self.iv = iu.astype(np.intp), iv.astype(np.intp)

    def edges(self, z: Tensor) -> Tensor:
        _check_latent(z)
        b = z.shape[0]
        emb = ad.reshape(self.embed(ad.relu(self.fc1(z))), (b, self.v, self.r))
        xu = ad.take(emb, self.iu, axis=1)
        xv = ad.take(emb, self.iv, axis=1)
        alpha = ad.reshape(ad.softplus(self.alpha_raw), (1, 1, self.r))
        quad = ad.sum_(ad.mul(ad.mul(xu, xv), alpha), axis=2)
        log_rate = ad.clip(ad.add(quad, ad.reshape(self.edge_bias, (1, -1))), -30.0, 30.0)
        return ad.exp(log_rate)

    def matrix(self, z: Tensor) -> Tensor:
        return ad.sym_from_edges(self.edges(z), self.v)


def build_decoders(variant: str, rng: np.random.Generator, v: int = V_NODES):
    """Return (fc_decoder, sc_decoder) for a named variant."""
    if variant == IMAGE_VARIANT:
        return FcConvDecoder(rng, v), ScMlpDecoder(rng, v)
    if variant == BILINEAR_VARIANT:
        return BilinearFcDecoder(rng, v), BilinearScDecoder(rng, v)
    raise ValueError(f"unknown decoder variant {variant!r}, expected one of {DECODER_VARIANTS}")


def sample_sc(rate_matrix: np.ndarray, seed: int) -> np.ndarray:
    """Independent Poisson draws per lower-triangle edge, mirrored to symmetry."""
    rate = np.asarray(rate_matrix, dtype=np.float64)
    v = rate.shape[-1]
    iu, iv = np.tril_indices(v, k=-1)
    lam = rate[..., iu, iv]
    counts = np.random.default_rng(seed).poisson(np.maximum(lam, 0.0)).astype(np.float64)
    out = np.zeros_like(rate)
    out[..., iu, iv] = counts
    out[..., iv, iu] = counts
    return out
