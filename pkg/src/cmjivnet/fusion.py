"""Attention-based cross-modal fusion and six-way latent separation.

The two reparameterized encoder samples are projected into a shared hidden
space and stacked as a 2-token sequence. Multi-head self-attention mixes
the tokens, a sigmoid gate rescales each mixed token, and the gated tokens
are summed into one fused vector. ``separate`` expands the fused vector to
six d_z-sized segments and applies one affine head per segment, yielding
the joint, FC-specific, and SC-specific Gaussian posteriors. The whole
separation path is affine by construction (superposition holds up to the
bias terms).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .encoders import GaussianLatent

N_HEADS = 3
HIDDEN_DIM = 192


@dataclass
class LatentTriple:
    joint: GaussianLatent
    fc_ind: GaussianLatent
    sc_ind: GaussianLatent

    def components(self):
        return (self.joint, self.fc_ind, self.sc_ind)


class AttentionFusion(nn.Module):
    def __init__(self, rng: np.random.Generator, d_z: int = 64,
                 hidden_dim: int = HIDDEN_DIM, n_heads: int = N_HEADS):
        super().__init__()
        if hidden_dim % n_heads != 0:
            raise ValueError(f"hidden_dim {hidden_dim} not divisible by {n_heads} heads")
        self.d_z = d_z
        self.hidden_dim = hidden_dim
        self.n_heads = n_heads
        self.head_dim = hidden_dim // n_heads
        self.proj_fc = nn.Linear(d_z, hidden_dim, rng)
        self.proj_sc = nn.Linear(d_z, hidden_dim, rng)
        self.w_q = nn.Linear(hidden_dim, hidden_dim, rng)
        self.w_k = nn.Linear(hidden_dim, hidden_dim, rng)
        self.w_v = nn.Linear(hidden_dim, hidden_dim, rng)
        self.w_o = nn.Linear(hidden_dim, hidden_dim, rng)
        self.gate = nn.Linear(hidden_dim, 1, rng)
        self.expand = nn.Linear(hidden_dim, 6 * d_z, rng)
        self.heads = [nn.Linear(d_z, d_z, rng) for _ in range(6)]

    def _attend(self, tokens: Tensor) -> Tensor:
        """Scaled dot-product self-attention over a (B, 2, hidden) sequence."""
        b, t, _ = tokens.shape
        h, hd = self.n_heads, self.head_dim

        def split_heads(x: Tensor) -> Tensor:
            return ad.transpose(ad.reshape(x, (b, t, h, hd)), (0, 2, 1, 3))

        q = split_heads(self.w_q(tokens))
        k = split_heads(self.w_k(tokens))
        v = split_heads(self.w_v(tokens))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(attn, v)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, t, self.hidden_dim))
        return self.w_o(merged)

    def attention_weights(self, z_fc: Tensor, z_sc: Tensor) -> np.ndarray:
        """(B, heads, 2, 2) row-stochastic attention maps, for inspection."""
        tokens = self._stack(z_fc, z_sc)
        b, t, _ = tokens.shape
        h, hd = self.n_heads, self.head_dim
        q = ad.transpose(ad.reshape(self.w_q(tokens), (b, t, h, hd)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(self.w_k(tokens), (b, t, h, hd)), (0, 2, 1, 3))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        return ad.softmax(scores, axis=-1).data

    def _stack(self, z_fc: Tensor, z_sc: Tensor) -> Tensor:
        b = z_fc.shape[0]
        h_fc = ad.reshape(self.proj_fc(z_fc), (b, 1, self.hidden_dim))
        h_sc = ad.reshape(self.proj_sc(z_sc), (b, 1, self.hidden_dim))
        return ad.concat([h_fc, h_sc], axis=1)

    def fuse(self, z_fc: Tensor, z_sc: Tensor) -> Tensor:
        """(B, d_z) x 2 -> (B, hidden_dim) gated sum of attended tokens."""
        mixed = self._attend(self._stack(z_fc, z_sc))
        gates = ad.sigmoid(self.gate(mixed))          # (B, 2, 1)
        gated = ad.mul(mixed, gates)
        return ad.sum_(gated, axis=1)

    def separate(self, fused: Tensor) -> LatentTriple:
        segments = ad.split(self.expand(fused), 6, axis=-1)
        outs = [head(seg) for head, seg in zip(self.heads, segments)]
        return LatentTriple(
            joint=GaussianLatent(mu=outs[0], logvar=outs[1]),
            fc_ind=GaussianLatent(mu=outs[2], logvar=outs[3]),
            sc_ind=GaussianLatent(mu=outs[4], logvar=outs[5]),
        )

    def __call__(self, z_fc: Tensor, z_sc: Tensor) -> LatentTriple:
        return self.separate(self.fuse(z_fc, z_sc))


def assemble_full(z_joint: Tensor, z_fc_ind: Tensor, z_sc_ind: Tensor):
    """Concatenate shared + specific samples into the two 2*d_z decoder inputs."""
    z_fc_full = ad.concat([z_joint, z_fc_ind], axis=-1)
    z_sc_full = ad.concat([z_joint, z_sc_ind], axis=-1)
    return z_fc_full, z_sc_full
