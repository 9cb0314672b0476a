"""Objective terms: reconstructions, KL families, the Donsker-Varadhan
mutual-information bound, orthogonality penalty, and composites.

All reconstruction and KL terms are per-sample sums averaged over the
batch. The MI critic maximizes its bound through the shared optimizer step
because the total loss contains -I_hat; its log-denominator gradient is
corrected with a moving average of E[e^T] (rate 0.99) to reduce bias, with
the forward value always the exact batch statistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import ShapeError, Tensor
from .encoders import GaussianLatent
from .fusion import LatentTriple

MA_RATE = 0.99
MINE_HIDDEN = 128


@dataclass
class LossWeights:
    fc: float = 1.0
    sc: float = 0.01        # rebalances count-scale Poisson term vs unit-scale FC
    fusion: float = 1.0
    mi: float = 0.1
    ortho: float = 1.0
    ft: float = 0.01        # reconstruction weight during fine-tuning stage 2
    mse: float = 1.0
    corr: float = 1.0
    eps_cos: float = 1e-8

    def validate(self) -> None:
        for name in ("fc", "sc", "fusion", "mi", "ortho", "ft", "mse", "corr", "eps_cos"):
            if getattr(self, name) <= 0:
                raise ValueError(f"loss weight {name} must be strictly positive")


@dataclass
class LossParts:
    """Scalar tensors for each term of the total objective."""

    fc: Tensor
    sc: Tensor
    kl_enc: Tensor
    kl_fusion: Tensor
    mi: Tensor
    ortho: Tensor

    def values(self) -> dict:
        return {name: float(getattr(self, name).data)
                for name in ("fc", "sc", "kl_enc", "kl_fusion", "mi", "ortho")}


def recon_loss_fc(x_edges: Tensor, mu_edges: Tensor) -> Tensor:
    """Batch-mean over samples of the summed squared edge errors."""
    if tuple(x_edges.shape) != tuple(mu_edges.shape):
        raise ShapeError(f"FC recon: {tuple(x_edges.shape)} vs {tuple(mu_edges.shape)}")
    per_sample = ad.sum_(ad.square(ad.sub(x_edges, mu_edges)), axis=-1)
    return ad.mean(per_sample)


def recon_loss_sc(x_edges: Tensor, rate_edges: Tensor) -> Tensor:
    """Batch-mean of sum_l (lambda_l - x_l log lambda_l).

    Equals the full Poisson negative log-likelihood up to the data-only
    constant sum_l log(x_l!).
    """
    if tuple(x_edges.shape) != tuple(rate_edges.shape):
        raise ShapeError(f"SC recon: {tuple(x_edges.shape)} vs {tuple(rate_edges.shape)}")
    if np.any(rate_edges.data <= 0):
        raise ValueError("SC reconstruction requires strictly positive rates")
    per_edge = ad.sub(rate_edges, ad.mul(x_edges, ad.log(rate_edges)))
    return ad.mean(ad.sum_(per_edge, axis=-1))


def kl_std_normal(g: GaussianLatent) -> Tensor:
    """Closed-form KL(N(mu, diag sigma^2) || N(0, I)), batch-averaged."""
    var = ad.exp(g.logvar)
    per_dim = ad.sub(ad.add(ad.square(g.mu), var), ad.add(g.logvar, 1.0))
    return ad.mul(ad.mean(ad.sum_(per_dim, axis=-1)), 0.5)


def kl_terms(enc_fc: GaussianLatent, enc_sc: GaussianLatent, triple: LatentTriple):
    kl_enc = ad.add(kl_std_normal(enc_fc), kl_std_normal(enc_sc))
    kl_fusion = ad.add(ad.add(kl_std_normal(triple.joint), kl_std_normal(triple.fc_ind)),
                       kl_std_normal(triple.sc_ind))
    return kl_enc, kl_fusion


def _cos_squared(a: Tensor, b: Tensor, eps: float) -> Tensor:
    dot = ad.sum_(ad.mul(a, b), axis=-1)
    na = ad.sqrt(ad.sum_(ad.square(a), axis=-1))
    nb = ad.sqrt(ad.sum_(ad.square(b), axis=-1))
    cos = ad.div(dot, ad.add(ad.mul(na, nb), eps))
    return ad.square(cos)


def orthogonality_loss(mu_joint: Tensor, mu_fc: Tensor, mu_sc: Tensor,
                       eps: float = 1e-8) -> Tensor:
    """Sum of the three pairwise squared cosines of the mean vectors,
    averaged over the batch."""
    total = ad.add(ad.add(_cos_squared(mu_joint, mu_fc, eps),
                          _cos_squared(mu_joint, mu_sc, eps)),
                   _cos_squared(mu_fc, mu_sc, eps))
    return ad.mean(total)


class MineCritic(nn.Module):
    """Two-hidden-layer MLP scoring (z_fc, z_sc) pairs, with the moving
    average of E[e^T] kept as a buffer for gradient bias correction."""

    def __init__(self, rng: np.random.Generator, d_z: int = 64,
                 hidden: int = MINE_HIDDEN):
        super().__init__()
        self.fc1 = nn.Linear(2 * d_z, hidden, rng)
        self.fc2 = nn.Linear(hidden, hidden, rng)
        self.out = nn.Linear(hidden, 1, rng)
        self.ma = Tensor(np.zeros((), dtype=np.float32))
        self.ma_init = Tensor(np.zeros((), dtype=np.float32))

    def scores(self, z_fc: Tensor, z_sc: Tensor) -> Tensor:
        h = ad.concat([z_fc, z_sc], axis=-1)
        h = ad.relu(self.fc1(h))
        h = ad.relu(self.fc2(h))
        return ad.reshape(self.out(h), (-1,))

    def update_ma(self, batch_value: float) -> float:
        """Fold a batch statistic into the moving average; the first batch
        initializes it exactly so step-1 gradients match the uncorrected log."""
        if float(self.ma_init.data) == 0.0:
            self.ma.data = np.asarray(batch_value, dtype=self.ma.dtype)
            self.ma_init.data = np.asarray(1.0, dtype=self.ma_init.dtype)
        else:
            self.ma.data = np.asarray(MA_RATE * float(self.ma.data)
                                      + (1.0 - MA_RATE) * batch_value, dtype=self.ma.dtype)
        return float(self.ma.data)


def mine_lower_bound(critic: MineCritic, z_fc: Tensor, z_sc: Tensor,
                     perm: np.ndarray, update_ma: bool = True) -> Tensor:
    """Donsker-Varadhan bound E_joint[T] - log E_marg[e^T].

    ``perm`` permutes the SC side within the batch to simulate the product
    of marginals. With ``update_ma`` the critic folds this batch into its
    moving average and the log gradient is taken against that average.
    """
    b = z_fc.shape[0]
    if b < 2:
        raise ValueError(f"MI bound needs a batch of at least 2, got {b}")
    if len(perm) != b:
        raise ShapeError(f"permutation length {len(perm)} != batch {b}")
    t_joint = ad.mean(critic.scores(z_fc, z_sc))
    t_marg = critic.scores(z_fc, ad.take(z_sc, np.asarray(perm, dtype=np.intp), axis=0))
    mean_exp = ad.mean(ad.exp(t_marg))
    if update_ma:
        critic.update_ma(float(mean_exp.data))
    denom = float(critic.ma.data) if float(critic.ma_init.data) else float(mean_exp.data)
    return ad.sub(t_joint, ad.log_with_corrected_grad(mean_exp, denom))


def total_loss(parts: LossParts, weights: LossWeights) -> Tensor:
    for name, value in parts.values().items():
        if not np.isfinite(value):
            raise FloatingPointError(f"loss term {name} is not finite ({value})")
    recon = ad.add(ad.mul(parts.fc, weights.fc), ad.mul(parts.sc, weights.sc))
    reg = ad.add(ad.add(ad.mul(parts.kl_fusion, weights.fusion),
                        ad.mul(parts.mi, weights.mi)),
                 ad.mul(parts.ortho, weights.ortho))
    return ad.add(ad.add(recon, parts.kl_enc), reg)


def supervised_loss(y_hat: Tensor, y: Tensor, weights: LossWeights,
                    diagnostics: dict = None) -> Tensor:
    """Per-trait MSE plus one-minus-Pearson, summed over traits.

    A prediction column with (numerically) zero variance contributes a
    correlation of 0, i.e. a full 1.0 penalty, and is recorded in
    ``diagnostics['zero_variance_traits']`` when a dict is supplied.
    """
    if tuple(y_hat.shape) != tuple(y.shape):
        raise ShapeError(f"supervised loss: {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    b, k = y.shape
    if b < 2:
        raise ValueError("supervised loss needs at least 2 samples for correlation")
    eps = 1e-8
    mse = ad.mean(ad.square(ad.sub(y_hat, y)), axis=0)
    yh_c = ad.sub(y_hat, ad.mean(y_hat, axis=0, keepdims=True))
    y_c = ad.sub(y, ad.mean(y, axis=0, keepdims=True))
    cov = ad.mean(ad.mul(yh_c, y_c), axis=0)
    sd_h = ad.sqrt(ad.mean(ad.square(yh_c), axis=0))
    sd_y = ad.sqrt(ad.mean(ad.square(y_c), axis=0))
    corr = ad.div(cov, ad.add(ad.mul(sd_h, sd_y), eps))
    if diagnostics is not None:
        dead = [int(i) for i in range(k) if float(sd_h.data[i]) < 1e-7]
        if dead:
            diagnostics.setdefault("zero_variance_traits", []).extend(dead)
    per_trait = ad.add(ad.mul(mse, weights.mse), ad.mul(ad.sub(1.0, corr), weights.corr))
    return ad.sum_(per_trait)
