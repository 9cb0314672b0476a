"""Reconstruction metrics, distributional distances, latent geometry,
joint-coordinate traversal, cross-modal prediction metrics, and ridge
trait prediction.

Conventions: edge-level metrics operate on the D = V(V-1)/2 strict
lower-triangle values; graph metrics take absolute edge weights so FC
matrices yield valid Laplacians and strengths; distributional distances
are Frechet distances between per-set Gaussian fits of graph features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.signal import convolve2d
from scipy.sparse.csgraph import shortest_path

from . import serialization as ser
from .autodiff import Tensor
from .data import FC, SC, Dataset, vectorize_lower
from .model import CmJivNet, cross_modal_predict, latent_means, run_model

SPECTRAL_K = 20
CHANGE_EPS = 1e-9


# ---------------------------------------------------------------------------
# correlation


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Plain Pearson r; NaN when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError(f"pearson needs two equal-length vectors of size >= 2, "
                         f"got {a.shape} and {b.shape}")
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt((ac * ac).sum() * (bc * bc).sum())
    if denom == 0:
        return float("nan")
    return float((ac * bc).sum() / denom)


def pearson_individual(real_edges: np.ndarray, pred_edges: np.ndarray):
    """Per-subject edge correlation: (mean, std, per-subject array)."""
    rs = np.array([pearson(real_edges[i], pred_edges[i])
                   for i in range(real_edges.shape[0])])
    valid = rs[~np.isnan(rs)]
    if valid.size == 0:
        return float("nan"), float("nan"), rs
    return float(valid.mean()), float(valid.std()), rs


def pearson_group(real_edges: np.ndarray, pred_edges: np.ndarray) -> float:
    """Correlation of the across-subject mean edge vectors."""
    return pearson(real_edges.mean(axis=0), pred_edges.mean(axis=0))


# ---------------------------------------------------------------------------
# SSIM


def _gaussian_kernel(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(x: np.ndarray, y: np.ndarray, window: int = 7, sigma: float = 1.5) -> float:
    """Mean windowed SSIM with a Gaussian window; the dynamic range L comes
    from the first argument."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    lum = max(float(x.max() - x.min()), 1e-12)
    c1 = (0.01 * lum) ** 2
    c2 = (0.03 * lum) ** 2
    k = _gaussian_kernel(window, sigma)
    mu_x = convolve2d(x, k, mode="valid")
    mu_y = convolve2d(y, k, mode="valid")
    xx = convolve2d(x * x, k, mode="valid") - mu_x * mu_x
    yy = convolve2d(y * y, k, mode="valid") - mu_y * mu_y
    xy = convolve2d(x * y, k, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# distributional distances


def laplacian_eigenvalues(matrix: np.ndarray, k: int = SPECTRAL_K) -> np.ndarray:
    """k largest eigenvalues of the normalized Laplacian on |weights|."""
    a = np.abs(np.asarray(matrix, dtype=np.float64))
    np.fill_diagonal(a, 0.0)
    v = a.shape[0]
    if k > v:
        raise ValueError(f"k={k} exceeds node count {v}")
    deg = np.maximum(a.sum(axis=1), 1e-12)
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(v) - (inv_sqrt[:, None] * a) * inv_sqrt[None, :]
    eig = np.linalg.eigvalsh(lap)
    return eig[::-1][:k]


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, clamping tiny
    negative eigenvalues to zero."""
    sym = (m + m.T) / 2.0
    w, q = np.linalg.eigh(sym)
    w = np.clip(w, 0.0, None)
    return (q * np.sqrt(w)) @ q.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}) between
    Gaussian fits of two feature sets (rows = samples)."""
    a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("Frechet distance needs at least 2 samples per set")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    diff = mu_a - mu_b
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    val = float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * cross))
    return max(val, 0.0)


def spectral_fid(real_mats: np.ndarray, recon_mats: np.ndarray,
                 k: int = SPECTRAL_K) -> float:
    fa = np.stack([laplacian_eigenvalues(m, k) for m in real_mats])
    fb = np.stack([laplacian_eigenvalues(m, k) for m in recon_mats])
    return frechet_distance(fa, fb)


def _onnela_clustering(a: np.ndarray) -> float:
    """Network-average weighted clustering (geometric-mean triangle form).

    Weights are scaled by the graph maximum; nodes of degree < 2 contribute 0.
    """
    w = a / a.max() if a.max() > 0 else a
    cube = np.cbrt(w)
    tri = np.diagonal(cube @ cube @ cube)          # 2 * triangle intensity
    deg = (a > 0).sum(axis=1)
    denom = deg * (deg - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(denom > 0, tri / denom, 0.0)
    return float(c.mean())


def _global_efficiency(a: np.ndarray) -> float:
    """Mean inverse shortest-path length with edge lengths 1/weight."""
    v = a.shape[0]
    with np.errstate(divide="ignore"):
        dist = np.where(a > 0, 1.0 / a, 0.0)       # 0 means no direct edge
    sp = shortest_path(dist, method="D", directed=False)
    inv = np.zeros_like(sp)
    off = ~np.eye(v, dtype=bool)
    finite = off & np.isfinite(sp) & (sp > 0)
    inv[finite] = 1.0 / sp[finite]
    return float(inv[off].mean())


def graph_features(matrix: np.ndarray) -> np.ndarray:
    """[mean strength, std strength, clustering, efficiency, log total weight]."""
    a = np.abs(np.asarray(matrix, dtype=np.float64))
    np.fill_diagonal(a, 0.0)
    strength = a.sum(axis=1)
    total = vectorize_lower(a).sum()
    return np.array([strength.mean(), strength.std(),
                     _onnela_clustering(a), _global_efficiency(a),
                     np.log(max(total, 1e-12))])


def graph_fid(real_mats: np.ndarray, recon_mats: np.ndarray) -> float:
    fa = np.stack([graph_features(m) for m in real_mats])
    fb = np.stack([graph_features(m) for m in recon_mats])
    return frechet_distance(fa, fb)


# ---------------------------------------------------------------------------
# latent geometry


def pairwise_angles(mu_joint: np.ndarray, mu_fc: np.ndarray, mu_sc: np.ndarray) -> dict:
    """Mean and std of the three pairwise angles (degrees) across subjects.

    Subjects contributing a zero vector to a pair are excluded from that
    pair and counted under 'excluded'.
    """
    def angles(a, b):
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        keep = (na > 0) & (nb > 0)
        cos = np.einsum("ij,ij->i", a[keep], b[keep]) / (na[keep] * nb[keep])
        return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))), int((~keep).sum())

    out = {}
    excluded = 0
    for name, (a, b) in {"joint_fc": (mu_joint, mu_fc),
                         "joint_sc": (mu_joint, mu_sc),
                         "fc_sc": (mu_fc, mu_sc)}.items():
        vals, skipped = angles(a, b)
        excluded += skipped
        out[name] = (float(vals.mean()), float(vals.std()))
    out["excluded"] = excluded
    return out


# ---------------------------------------------------------------------------
# joint traversal


@dataclass
class TraversalResult:
    direction: np.ndarray          # PC1 unit vector in joint space
    sigma: float                   # std of joint means along PC1
    t_grid: np.ndarray
    delta_fc: np.ndarray           # per-edge endpoint change of FC
    delta_sc: np.ndarray           # per-edge endpoint change of log1p(SC rate)
    slope_fc: np.ndarray           # per-edge least-squares slope vs t
    slope_sc: np.ndarray
    quadrants: dict = field(default_factory=dict)


def _lsq_slopes(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-column least-squares slope of y (S, D) against t (S,)."""
    tc = t - t.mean()
    denom = (tc * tc).sum()
    return (tc[:, None] * (y - y.mean(axis=0))).sum(axis=0) / denom


def quadrant_fractions(delta_fc: np.ndarray, delta_sc: np.ndarray,
                       eps: float = CHANGE_EPS) -> dict:
    """Sign-quadrant shares over changing edges.

    Edges with both |deltas| below eps fall into 'no_change'. For a single
    zero-valued delta the sign counts as up (sign >= 0 reads as an
    increase); the four quadrant fractions sum to 1 over changing edges.
    """
    no_change = (np.abs(delta_fc) < eps) & (np.abs(delta_sc) < eps)
    changing = ~no_change
    n = int(changing.sum())
    out = {"no_change": int(no_change.sum()), "n_changing": n}
    if n == 0:
        out.update({"up_up": float("nan"), "up_down": float("nan"),
                    "down_up": float("nan"), "down_down": float("nan")})
        return out
    fc_up = delta_fc[changing] >= 0
    sc_up = delta_sc[changing] >= 0
    out["up_up"] = float((fc_up & sc_up).sum() / n)
    out["up_down"] = float((fc_up & ~sc_up).sum() / n)
    out["down_up"] = float((~fc_up & sc_up).sum() / n)
    out["down_down"] = float((~fc_up & ~sc_up).sum() / n)
    return out


def joint_traversal(decode_pair: Callable, mu_joint_all: np.ndarray,
                    fixed_fc_ind: np.ndarray, fixed_sc_ind: np.ndarray,
                    steps: int, extent: float) -> TraversalResult:
    """Core traversal over PC1 of the joint means.

    ``decode_pair(z_fc_full, z_sc_full) -> (fc_edges, sc_log_edges)`` maps a
    batch of full latents to FC edge values and log1p SC rates; injecting it
    keeps the geometry testable against rigged linear decoders.
    """
    if steps < 2:
        raise ValueError("traversal needs at least 2 steps")
    center = mu_joint_all.mean(axis=0)
    cov = np.cov(mu_joint_all, rowvar=False)
    w, q = np.linalg.eigh(cov)
    u1 = q[:, -1]
    u1 = u1 if u1[np.argmax(np.abs(u1))] >= 0 else -u1
    sigma = float(np.sqrt(max(w[-1], 0.0)))
    t = np.linspace(-extent * sigma, extent * sigma, steps)
    z_joint = center[None, :] + t[:, None] * u1[None, :]
    z_fc_full = np.concatenate([z_joint, np.tile(fixed_fc_ind, (steps, 1))], axis=1)
    z_sc_full = np.concatenate([z_joint, np.tile(fixed_sc_ind, (steps, 1))], axis=1)
    fc_edges, sc_log_edges = decode_pair(z_fc_full.astype(np.float32),
                                         z_sc_full.astype(np.float32))
    fc_edges = np.asarray(fc_edges, dtype=np.float64)
    sc_log_edges = np.asarray(sc_log_edges, dtype=np.float64)
    delta_fc = fc_edges[-1] - fc_edges[0]
    delta_sc = sc_log_edges[-1] - sc_log_edges[0]
    return TraversalResult(
        direction=u1, sigma=sigma, t_grid=t,
        delta_fc=delta_fc, delta_sc=delta_sc,
        slope_fc=_lsq_slopes(t, fc_edges),
        slope_sc=_lsq_slopes(t, sc_log_edges),
        quadrants=quadrant_fractions(delta_fc, delta_sc),
    )


def traverse_joint(model: CmJivNet, dataset: Dataset, steps: int = 21,
                   extent: float = 3.0) -> TraversalResult:
    """Traverse PC1 of the joint posterior means with modality-specific
    latents fixed at their dataset means; SC is analyzed as log1p(rate)."""
    model.eval()
    fc_mats = np.stack([s.fc.matrix for s in dataset.samples])
    sc_mats = np.stack([s.sc.matrix for s in dataset.samples])
    mu_j, mu_f, mu_s = latent_means(model, fc_mats, sc_mats)

    def decode_pair(z_fc_full, z_sc_full):
        fc = model.fc_decoder.edges(Tensor(z_fc_full.astype(model.dtype))).data
        rates = model.sc_decoder.edges(Tensor(z_sc_full.astype(model.dtype))).data
        return fc, np.log1p(rates)

    return joint_traversal(decode_pair, mu_j, mu_f.mean(axis=0), mu_s.mean(axis=0),
                           steps, extent)


# ---------------------------------------------------------------------------
# ridge trait prediction


def _kfold_indices(n: int, folds: int, seed: int):
    order = np.random.default_rng(seed).permutation(n)
    return [order[i::folds] for i in range(folds)]


def _ridge_solve(x: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    p = x.shape[1]
    gram = x.T @ x + alpha * np.eye(p)
    try:
        return np.linalg.solve(gram, x.T @ y)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(gram, x.T @ y, rcond=None)[0]


def _standardize(train: np.ndarray, *others):
    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), 1e-12)
    return tuple((arr - mean) / std for arr in (train, *others))


def ridge_trait_cv(features: np.ndarray, y: np.ndarray, folds: int = 5,
                   seed: int = 0, alphas: Optional[np.ndarray] = None) -> dict:
    """Nested-CV ridge regression; returns per-trait out-of-fold r.

    Outer k-fold with seed-deterministic partition; inner (folds-1)-fold
    grid search over alpha, selected per trait by validation MSE. Constant
    traits report NaN.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[0] == 1:
        y = y.T
    n, k = y.shape
    if n < folds or folds < 2:
        raise ValueError(f"need N >= folds >= 2, got N={n}, folds={folds}")
    if alphas is None:
        alphas = np.logspace(-3, 3, 13)
    outer = _kfold_indices(n, folds, seed)
    y_hat = np.full_like(y, np.nan)
    for f, test_idx in enumerate(outer):
        train_idx = np.setdiff1d(np.arange(n), test_idx)
        x_tr, y_tr = x[train_idx], y[train_idx]
        inner = _kfold_indices(len(train_idx), folds - 1, seed + 1000 + f)
        sse = np.zeros((len(alphas), k))
        for val_pos in inner:
            fit_pos = np.setdiff1d(np.arange(len(train_idx)), val_pos)
            x_fit, x_val = _standardize(x_tr[fit_pos], x_tr[val_pos])
            y_mean = y_tr[fit_pos].mean(axis=0)
            for a, alpha in enumerate(alphas):
                beta = _ridge_solve(x_fit, y_tr[fit_pos] - y_mean, alpha)
                pred = x_val @ beta + y_mean
                sse[a] += ((pred - y_tr[val_pos]) ** 2).sum(axis=0)
        best = np.asarray(alphas)[np.argmin(sse, axis=0)]
        x_fit, x_te = _standardize(x_tr, x[test_idx])
        y_mean = y_tr.mean(axis=0)
        for alpha in np.unique(best):
            cols = np.where(best == alpha)[0]
            beta = _ridge_solve(x_fit, y_tr[:, cols] - y_mean[cols], alpha)
            y_hat[np.ix_(test_idx, cols)] = x_te @ beta + y_mean[cols]
    out = {}
    for j in range(k):
        if np.std(y[:, j]) == 0:
            out[f"trait_{j}"] = float("nan")
        else:
            out[f"trait_{j}"] = pearson(y[:, j], y_hat[:, j])
    return out


# ---------------------------------------------------------------------------
# reports and exports


@dataclass
class ModalityMetrics:
    mse: float
    ssim_mean: float
    pearson_individual_mean: float
    pearson_individual_std: float
    pearson_group: float
    spectral: float
    graph: float


@dataclass
class MetricReport:
    fc: Optional[ModalityMetrics] = None
    sc: Optional[ModalityMetrics] = None

    def lines(self) -> list:
        out = []
        for name, m in (("fc", self.fc), ("sc", self.sc)):
            if m is None:
                continue
            out += [f"{name}.mse={m.mse:.9g}",
                    f"{name}.ssim={m.ssim_mean:.9g}",
                    f"{name}.pearson_individual_mean={m.pearson_individual_mean:.9g}",
                    f"{name}.pearson_individual_std={m.pearson_individual_std:.9g}",
                    f"{name}.pearson_group={m.pearson_group:.9g}",
                    f"{name}.spectral_fid={m.spectral:.9g}",
                    f"{name}.graph_fid={m.graph:.9g}"]
        return out


def _modality_metrics(real_mats: np.ndarray, pred_mats: np.ndarray) -> ModalityMetrics:
    real_edges = np.stack([vectorize_lower(m) for m in real_mats])
    pred_edges = np.stack([vectorize_lower(m) for m in pred_mats])
    ind_mean, ind_std, _ = pearson_individual(real_edges, pred_edges)
    ssims = [ssim(real_mats[i], pred_mats[i]) for i in range(real_mats.shape[0])]
    return ModalityMetrics(
        mse=float(np.mean((real_edges - pred_edges) ** 2)),
        ssim_mean=float(np.mean(ssims)),
        pearson_individual_mean=ind_mean,
        pearson_individual_std=ind_std,
        pearson_group=pearson_group(real_edges, pred_edges),
        spectral=spectral_fid(real_mats, pred_mats),
        graph=graph_fid(real_mats, pred_mats),
    )


def evaluate_reconstruction(model: CmJivNet, dataset: Dataset,
                            mode: str = "both") -> MetricReport:
    """Reconstruction (mode='both') or cross-modal prediction metrics.

    'sc2fc' encodes SC only and scores the predicted FC; 'fc2sc' the
    reverse, scoring predicted rates against observed counts.
    """
    model.eval()
    fc_mats = np.stack([s.fc.matrix for s in dataset.samples]).astype(np.float64)
    sc_mats = np.stack([s.sc.matrix for s in dataset.samples]).astype(np.float64)
    report = MetricReport()
    if mode == "both":
        state = run_model(model, fc_mats, sc_mats, noise=None)
        fc_pred = model.fc_decoder.matrix(Tensor(state.z_fc_full.data)).data.astype(np.float64)
        sc_pred = model.sc_decoder.matrix(Tensor(state.z_sc_full.data)).data.astype(np.float64)
        report.fc = _modality_metrics(fc_mats, fc_pred)
        report.sc = _modality_metrics(sc_mats, sc_pred)
    elif mode == "sc2fc":
        fc_pred = cross_modal_predict(model, sc_mats, SC).astype(np.float64)
        report.fc = _modality_metrics(fc_mats, fc_pred)
    elif mode == "fc2sc":
        sc_pred = cross_modal_predict(model, fc_mats, FC).astype(np.float64)
        report.sc = _modality_metrics(sc_mats, sc_pred)
    else:
        raise ValueError(f"unknown eval mode {mode!r}, expected both|sc2fc|fc2sc")
    return report


def export_latents(model: CmJivNet, dataset: Dataset, path: str) -> None:
    """CSV of the three posterior mean blocks, one row per subject per
    subspace, labeled joint / fc_ind / sc_ind."""
    model.eval()
    fc_mats = np.stack([s.fc.matrix for s in dataset.samples])
    sc_mats = np.stack([s.sc.matrix for s in dataset.samples])
    mu_j, mu_f, mu_s = latent_means(model, fc_mats, sc_mats)
    d = mu_j.shape[1]
    with ser.atomic_write(path) as f:
        header = "subspace,subject," + ",".join(f"z{i}" for i in range(d)) + "\n"
        f.write(header.encode())
        for label, block in (("joint", mu_j), ("fc_ind", mu_f), ("sc_ind", mu_s)):
            for i in range(block.shape[0]):
                vals = ",".join(f"{x:.9g}" for x in block[i])
                f.write(f"{label},{i},{vals}\n".encode())
