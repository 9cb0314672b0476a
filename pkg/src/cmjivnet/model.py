"""Full model assembly: encoders, fusion, decoders, MI critic, optional
trait-regression heads, and the forward passes used by training and
evaluation.

Inputs arrive as raw connectome matrices. FC matrices feed the encoder
directly; SC counts are transformed to log(1 + count) and standardized
with dataset statistics held in buffers (the Poisson decoder still targets
raw counts). One forward pass produces the encoder posteriors, the fused
triple, the assembled 128-dim decoder latents, and the reconstruction
edges; loss assembly is a separate pure step so the same forward state
serves training, gradient checking, and diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .data import FC, SC
from .decoders import IMAGE_VARIANT, build_decoders
from .encoders import ConvEncoder, GaussianLatent, reparameterize
from .fusion import AttentionFusion, LatentTriple, assemble_full
from .losses import LossParts, LossWeights, MineCritic, kl_terms, mine_lower_bound, \
    orthogonality_loss, recon_loss_fc, recon_loss_sc

RATE_FLOOR = 1e-8
NOISE_KEYS = ("enc_fc", "enc_sc", "joint", "fc_ind", "sc_ind")


class RegressionHeads(nn.Module):
    """K affine heads over the 3*d_z concatenated posterior means."""

    def __init__(self, rng: np.random.Generator, n_traits: int, d_in: int = 192):
        super().__init__()
        self.linear = nn.Linear(d_in, n_traits, rng)

    def __call__(self, z_cat: Tensor) -> Tensor:
        return self.linear(z_cat)


class CmJivNet(nn.Module):
    def __init__(self, rng: np.random.Generator, d_z: int = 64,
                 hidden_dim: int = 192, decoder_variant: str = IMAGE_VARIANT,
                 v: int = 68, n_traits: int = 0):
        super().__init__()
        self.d_z = d_z
        self.v = v
        self.decoder_variant = decoder_variant
        self.n_traits = n_traits
        self.fc_encoder = ConvEncoder(rng, d_z)
        self.sc_encoder = ConvEncoder(rng, d_z)
        self.fusion = AttentionFusion(rng, d_z, hidden_dim)
        self.fc_decoder, self.sc_decoder = build_decoders(decoder_variant, rng, v)
        self.critic = MineCritic(rng, d_z)
        self.heads = RegressionHeads(rng, n_traits, 3 * d_z) if n_traits > 0 else None
        self.sc_in_mean = Tensor(np.zeros((), dtype=np.float32))
        self.sc_in_std = Tensor(np.ones((), dtype=np.float32))

    def add_heads(self, rng: np.random.Generator, n_traits: int) -> None:
        self.heads = RegressionHeads(rng, n_traits, 3 * self.d_z)
        self.n_traits = n_traits

    def set_sc_stats(self, mean: float, std: float) -> None:
        self.sc_in_mean.data = np.asarray(mean, dtype=self.sc_in_mean.dtype)
        self.sc_in_std.data = np.asarray(std, dtype=self.sc_in_std.dtype)

    @property
    def dtype(self):
        return self.sc_in_mean.dtype

    def preprocess_fc(self, fc_mats: np.ndarray) -> Tensor:
        x = np.asarray(fc_mats, dtype=self.dtype)
        return Tensor(x[:, None])

    def preprocess_sc(self, sc_mats: np.ndarray) -> Tensor:
        x = np.log1p(np.asarray(sc_mats, dtype=np.float64))
        x = (x - float(self.sc_in_mean.data)) / float(self.sc_in_std.data)
        return Tensor(x.astype(self.dtype)[:, None])


@dataclass
class ForwardState:
    enc_fc: GaussianLatent
    enc_sc: GaussianLatent
    z_fc_tilde: Tensor
    z_sc_tilde: Tensor
    triple: LatentTriple
    z_fc_full: Tensor
    z_sc_full: Tensor
    fc_mu_edges: Tensor
    sc_rate_edges: Tensor


def draw_noise(rng: np.random.Generator, batch: int, d_z: int, dtype=np.float32) -> dict:
    """Reparameterization noise for all five sampling sites, fixed order."""
    return {k: rng.standard_normal((batch, d_z)).astype(dtype) for k in NOISE_KEYS}


def zero_noise(batch: int, d_z: int, dtype=np.float32) -> dict:
    return {k: np.zeros((batch, d_z), dtype=dtype) for k in NOISE_KEYS}


def run_model(model: CmJivNet, fc_mats: np.ndarray, sc_mats: np.ndarray,
              noise: Optional[dict] = None) -> ForwardState:
    """Encode both modalities, fuse, separate, and decode.

    ``noise`` of None means deterministic posterior means everywhere
    (evaluation); otherwise it must contain all five NOISE_KEYS arrays.
    """
    b = fc_mats.shape[0]
    if noise is None:
        noise = zero_noise(b, model.d_z, model.dtype)
    enc_fc = model.fc_encoder(model.preprocess_fc(fc_mats))
    enc_sc = model.sc_encoder(model.preprocess_sc(sc_mats))
    z_fc_tilde = reparameterize(enc_fc, noise["enc_fc"])
    z_sc_tilde = reparameterize(enc_sc, noise["enc_sc"])
    triple = model.fusion(z_fc_tilde, z_sc_tilde)
    z_joint = reparameterize(triple.joint, noise["joint"])
    z_fc_ind = reparameterize(triple.fc_ind, noise["fc_ind"])
    z_sc_ind = reparameterize(triple.sc_ind, noise["sc_ind"])
    z_fc_full, z_sc_full = assemble_full(z_joint, z_fc_ind, z_sc_ind)
    fc_mu_edges = model.fc_decoder.edges(z_fc_full)
    sc_rate_edges = ad.add(model.sc_decoder.edges(z_sc_full), RATE_FLOOR)
    return ForwardState(enc_fc=enc_fc, enc_sc=enc_sc,
                        z_fc_tilde=z_fc_tilde, z_sc_tilde=z_sc_tilde,
                        triple=triple, z_fc_full=z_fc_full, z_sc_full=z_sc_full,
                        fc_mu_edges=fc_mu_edges, sc_rate_edges=sc_rate_edges)


def compute_loss_parts(model: CmJivNet, state: ForwardState,
                       fc_edges: np.ndarray, sc_edges: np.ndarray,
                       perm: np.ndarray, weights: LossWeights,
                       update_ma: bool = True) -> LossParts:
    x_fc = Tensor(np.asarray(fc_edges, dtype=model.dtype))
    x_sc = Tensor(np.asarray(sc_edges, dtype=model.dtype))
    l_fc = recon_loss_fc(x_fc, state.fc_mu_edges)
    l_sc = recon_loss_sc(x_sc, state.sc_rate_edges)
    kl_enc, kl_fusion = kl_terms(state.enc_fc, state.enc_sc, state.triple)
    bound = mine_lower_bound(model.critic, state.z_fc_tilde, state.z_sc_tilde,
                             perm, update_ma=update_ma)
    l_mi = ad.neg(bound)
    l_ortho = orthogonality_loss(state.triple.joint.mu, state.triple.fc_ind.mu,
                                 state.triple.sc_ind.mu, eps=weights.eps_cos)
    return LossParts(fc=l_fc, sc=l_sc, kl_enc=kl_enc, kl_fusion=kl_fusion,
                     mi=l_mi, ortho=l_ortho)


def latent_means(model: CmJivNet, fc_mats: np.ndarray, sc_mats: np.ndarray):
    """Posterior mean triple with no sampling anywhere (eval-mode call)."""
    state = run_model(model, fc_mats, sc_mats, noise=None)
    t = state.triple
    return t.joint.mu.data, t.fc_ind.mu.data, t.sc_ind.mu.data


def z_cat_features(model: CmJivNet, fc_mats: np.ndarray, sc_mats: np.ndarray) -> np.ndarray:
    mj, mf, ms = latent_means(model, fc_mats, sc_mats)
    return np.concatenate([mj, mf, ms], axis=1)


def predict_traits(model: CmJivNet, fc_mats: np.ndarray, sc_mats: np.ndarray) -> np.ndarray:
    """Deterministic trait predictions from concatenated posterior means."""
    if model.heads is None:
        raise ValueError("model has no regression heads; run fine-tuning first")
    z = z_cat_features(model, fc_mats, sc_mats)
    return model.heads(Tensor(z.astype(model.dtype))).data


def fuse_single(model: CmJivNet, z: Tensor, available: str) -> LatentTriple:
    """Fusion with the missing modality's projected token replaced by zeros."""
    fus = model.fusion
    b = z.shape[0]
    zero_tok = Tensor(np.zeros((b, 1, fus.hidden_dim), dtype=z.dtype))
    if available == FC:
        tok = ad.reshape(fus.proj_fc(z), (b, 1, fus.hidden_dim))
        tokens = ad.concat([tok, zero_tok], axis=1)
    elif available == SC:
        tok = ad.reshape(fus.proj_sc(z), (b, 1, fus.hidden_dim))
        tokens = ad.concat([zero_tok, tok], axis=1)
    else:
        raise ValueError(f"unknown modality {available!r}")
    mixed = fus._attend(tokens)
    gates = ad.sigmoid(fus.gate(mixed))
    fused = ad.sum_(ad.mul(mixed, gates), axis=1)
    return fus.separate(fused)


def cross_modal_predict(model: CmJivNet, mats: np.ndarray, available: str) -> np.ndarray:
    """Predict the missing modality from the available one, using posterior
    means throughout (repeated calls are identical).

    Returns FC mean matrices when SC is given, SC rate matrices when FC is
    given, shape (B, V, V).
    """
    if available == SC:
        g = model.sc_encoder(model.preprocess_sc(mats))
    elif available == FC:
        g = model.fc_encoder(model.preprocess_fc(mats))
    else:
        raise ValueError(f"unknown modality {available!r}")
    triple = fuse_single(model, g.mu, available)
    if available == SC:
        z_full = ad.concat([triple.joint.mu, triple.fc_ind.mu], axis=-1)
        return model.fc_decoder.matrix(z_full).data
    z_full = ad.concat([triple.joint.mu, triple.sc_ind.mu], axis=-1)
    return model.sc_decoder.matrix(z_full).data
