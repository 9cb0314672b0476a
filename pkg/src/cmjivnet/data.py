"""Paired-connectome data model, vectorization helpers, and the synthetic
generator with planted joint and modality-specific factors.

A functional connectome (FC) is a symmetric correlation matrix with zero
diagonal and entries strictly inside (-1, 1); a structural connectome (SC)
is a symmetric matrix of nonnegative integer streamline counts stored as
floats. Both live on the same V-node parcellation and are vectorized to
their D = V(V-1)/2 strict lower-triangle edges.

The generator plants three score vectors per subject (shared, FC-only,
SC-only). Node embeddings are an affine function of the scores around a
fixed base, so edge weights carry a strong component linear in the scores,
which keeps the planted factors recoverable by linear probes:

    A_F = B_F + sum_m s_joint[m] C_Fj[m] + sum_m s_fc[m] C_Ff[m]
    FC  = tanh(A_F A_F^T / sqrt(V) + noise)
    A_S = B_S + sum_m s_joint[m] C_Sj[m] + sum_m s_sc[m] C_Ss[m]
    SC  ~ Poisson(exp(c + A_S A_S^T / sqrt(V) + jitter))

With noise_sc = 0 the counts are the rounded rates instead of Poisson
draws, so zero-noise generation is fully deterministic in the scores.
Traits are linear in [s_joint; s_fc] plus Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import serialization as ser
from .serialization import FileFormatError

FC = "FC"
SC = "SC"

_FLAG_TRAITS = 1
_FLAG_TRUTH = 2


def edge_count(v: int) -> int:
    return v * (v - 1) // 2


def vectorize_lower(matrix: np.ndarray) -> np.ndarray:
    """Strict lower-triangle entries in row-major (np.tril_indices) order."""
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected square matrix, got shape {m.shape}")
    iu, iv = np.tril_indices(m.shape[0], k=-1)
    return m[iu, iv]


def devectorize(vector: np.ndarray, v: int) -> np.ndarray:
    vec = np.asarray(vector)
    d = edge_count(v)
    if vec.shape != (d,):
        raise ValueError(f"edge vector has length {vec.shape}, expected ({d},) for V={v}")
    out = np.zeros((v, v), dtype=vec.dtype)
    iu, iv = np.tril_indices(v, k=-1)
    out[iu, iv] = vec
    out[iv, iu] = vec
    return out


def fisher_z(r):
    r = np.asarray(r, dtype=np.float64)
    if np.any(np.abs(r) >= 1.0):
        raise ValueError("fisher_z requires |r| < 1")
    return np.arctanh(r)


def fisher_z_inv(z):
    return np.tanh(np.asarray(z, dtype=np.float64))


@dataclass
class Connectome:
    matrix: np.ndarray
    modality: str

    def validate(self) -> None:
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"connectome matrix must be square, got {m.shape}")
        if not np.allclose(m, m.T, atol=1e-6):
            raise ValueError("connectome matrix is not symmetric")
        if np.any(np.diag(m) != 0):
            raise ValueError("connectome diagonal must be zero")
        if self.modality == FC:
            off = vectorize_lower(m)
            if np.any(np.abs(off) >= 1.0):
                raise ValueError("FC entries must lie strictly inside (-1, 1)")
        elif self.modality == SC:
            if np.any(m < 0) or not np.allclose(m, np.round(m)):
                raise ValueError("SC entries must be nonnegative integers")
        else:
            raise ValueError(f"unknown modality {self.modality!r}")

    @property
    def v(self) -> int:
        return self.matrix.shape[0]

    def edges(self) -> np.ndarray:
        return vectorize_lower(self.matrix)


@dataclass
class FactorScores:
    s_joint: np.ndarray
    s_fc: np.ndarray
    s_sc: np.ndarray


@dataclass
class PairedSample:
    fc: Connectome
    sc: Connectome
    traits: Optional[np.ndarray] = None
    truth: Optional[FactorScores] = None

    def __post_init__(self):
        if self.fc.v != self.sc.v:
            raise ValueError(f"FC has V={self.fc.v} but SC has V={self.sc.v}")


class Dataset:
    """Immutable collection of paired samples on a common parcellation."""

    def __init__(self, samples):
        samples = list(samples)
        if not samples:
            raise ValueError("dataset must contain at least one sample")
        v = samples[0].fc.v
        if any(s.fc.v != v for s in samples):
            raise ValueError("all samples must share the same V")
        self.samples = samples
        self.v = v

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i) -> PairedSample:
        return self.samples[i]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[int(i)] for i in indices])

    def fc_edges(self) -> np.ndarray:
        return np.stack([s.fc.edges() for s in self.samples]).astype(np.float32)

    def sc_edges(self) -> np.ndarray:
        return np.stack([s.sc.edges() for s in self.samples]).astype(np.float32)

    def traits_matrix(self) -> np.ndarray:
        if any(s.traits is None for s in self.samples):
            raise ValueError("dataset has samples without traits")
        return np.stack([s.traits for s in self.samples]).astype(np.float32)

    def truth_matrix(self) -> FactorScores:
        if any(s.truth is None for s in self.samples):
            raise ValueError("dataset has samples without planted scores")
        return FactorScores(
            s_joint=np.stack([s.truth.s_joint for s in self.samples]),
            s_fc=np.stack([s.truth.s_fc for s in self.samples]),
            s_sc=np.stack([s.truth.s_sc for s in self.samples]),
        )

    @property
    def has_traits(self) -> bool:
        return self.samples[0].traits is not None

    @property
    def has_truth(self) -> bool:
        return self.samples[0].truth is not None


@dataclass
class SyntheticSpec:
    """Knobs for the planted-factor generator.

    Scales are standard deviations of embedding entries; factor m within a
    group is tapered by factor_taper**m so leading factors dominate.
    noise_fc perturbs the tanh argument per edge; noise_sc jitters the log
    rate and, when zero, replaces Poisson sampling with rounded rates.
    """

    n_subjects: int = 256
    v: int = 68
    k_joint: int = 6
    k_fc: int = 4
    k_sc: int = 4
    n_traits: int = 3
    embed_cols: int = 6
    base_scale: float = 1.14
    joint_scale: float = 0.52
    fc_scale: float = 0.39
    sc_scale: float = 0.48
    factor_taper: float = 0.8
    noise_fc: float = 0.10
    noise_sc: float = 0.08
    noise_traits: float = 0.5
    sc_log_base: float = 2.3
    seed: int = 42

    def validate(self) -> None:
        for name in ("n_subjects", "embed_cols"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.v < 2:
            raise ValueError("v must be at least 2 (need at least one edge)")
        for name in ("k_joint", "k_fc", "k_sc", "n_traits"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("noise_fc", "noise_sc", "noise_traits"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _factor_tensors(rng, k: int, v: int, r: int, scale: float, taper: float) -> np.ndarray:
    """Stack of k loading matrices (k, V, R), tapered per factor."""
    out = rng.standard_normal((k, v, r))
    for m in range(k):
        out[m] *= scale * taper ** m
    return out


def _symmetric_noise(rng, n: int, v: int, std: float) -> np.ndarray:
    """Per-subject symmetric zero-diagonal noise fields (n, V, V)."""
    d = edge_count(v)
    iu, iv = np.tril_indices(v, k=-1)
    vals = rng.standard_normal((n, d)) * std
    out = np.zeros((n, v, v))
    out[:, iu, iv] = vals
    out[:, iv, iu] = vals
    return out


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Sample a dataset with planted joint/individual structure.

    All randomness flows from one generator seeded with spec.seed, with a
    fixed draw order (shared structure, then scores, then noise), so equal
    specs produce byte-identical datasets.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    v, n, r = spec.v, spec.n_subjects, spec.embed_cols
    sqv = np.sqrt(v)

    base_f = rng.standard_normal((v, r)) * spec.base_scale
    base_s = rng.standard_normal((v, r)) * spec.base_scale
    load_fj = _factor_tensors(rng, spec.k_joint, v, r, spec.joint_scale, spec.factor_taper)
    load_ff = _factor_tensors(rng, spec.k_fc, v, r, spec.fc_scale, spec.factor_taper)
    load_sj = _factor_tensors(rng, spec.k_joint, v, r, spec.joint_scale, spec.factor_taper)
    load_ss = _factor_tensors(rng, spec.k_sc, v, r, spec.sc_scale, spec.factor_taper)

    w_traits = rng.standard_normal((spec.n_traits, spec.k_joint + spec.k_fc))
    norms = np.linalg.norm(w_traits, axis=1, keepdims=True)
    w_traits = np.divide(w_traits, norms, out=np.zeros_like(w_traits), where=norms > 0)

    s_joint = rng.standard_normal((n, spec.k_joint))
    s_fc = rng.standard_normal((n, spec.k_fc))
    s_sc = rng.standard_normal((n, spec.k_sc))

    # (n, V, R) subject embeddings, affine in the scores
    a_f = base_f[None] + np.tensordot(s_joint, load_fj, axes=(1, 0)) \
        + np.tensordot(s_fc, load_ff, axes=(1, 0))
    a_s = base_s[None] + np.tensordot(s_joint, load_sj, axes=(1, 0)) \
        + np.tensordot(s_sc, load_ss, axes=(1, 0))

    arg_f = np.matmul(a_f, a_f.transpose(0, 2, 1)) / sqv
    if spec.noise_fc > 0:
        arg_f = arg_f + _symmetric_noise(rng, n, v, spec.noise_fc)
    fc_mats = np.tanh(arg_f)
    idx = np.arange(v)
    fc_mats[:, idx, idx] = 0.0

    log_rate = spec.sc_log_base + np.matmul(a_s, a_s.transpose(0, 2, 1)) / sqv
    if spec.noise_sc > 0:
        log_rate = log_rate + _symmetric_noise(rng, n, v, spec.noise_sc)
    rate = np.exp(np.clip(log_rate, -30.0, 12.0))
    iu, iv = np.tril_indices(v, k=-1)
    lam = rate[:, iu, iv]
    if spec.noise_sc > 0:
        counts = rng.poisson(lam).astype(np.float64)
    else:
        counts = np.round(lam)
    sc_mats = np.zeros((n, v, v))
    sc_mats[:, iu, iv] = counts
    sc_mats[:, iv, iu] = counts

    traits = s_joint @ w_traits[:, :spec.k_joint].T + s_fc @ w_traits[:, spec.k_joint:].T
    if spec.noise_traits > 0:
        traits = traits + rng.standard_normal((n, spec.n_traits)) * spec.noise_traits

    samples = []
    for i in range(n):
        samples.append(PairedSample(
            fc=Connectome(fc_mats[i].astype(np.float32), FC),
            sc=Connectome(sc_mats[i].astype(np.float32), SC),
            traits=traits[i].astype(np.float32),
            truth=FactorScores(s_joint=s_joint[i].astype(np.float32),
                               s_fc=s_fc[i].astype(np.float32),
                               s_sc=s_sc[i].astype(np.float32)),
        ))
    return Dataset(samples)


def split(dataset: Dataset, fractions, seed: int):
    """Seed-deterministic disjoint partition into len(fractions) subsets."""
    fractions = tuple(float(f) for f in fractions)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    counts = [int(n * f) for f in fractions[:-1]]
    counts.append(n - sum(counts))
    parts, start = [], 0
    for c in counts:
        parts.append(dataset.subset(perm[start:start + c]))
        start += c
    return tuple(parts)


def sc_log_stats(dataset: Dataset):
    """Mean and std of log1p(counts) over all edges; used to standardize
    encoder inputs (decoders still target raw counts)."""
    logs = np.log1p(dataset.sc_edges().astype(np.float64))
    return float(logs.mean()), float(max(logs.std(), 1e-6))


def save_dataset(path: str, dataset: Dataset) -> None:
    n, v = len(dataset), dataset.v
    k = dataset.samples[0].traits.shape[0] if dataset.has_traits else 0
    flags = (_FLAG_TRAITS if dataset.has_traits else 0) | (_FLAG_TRUTH if dataset.has_truth else 0)
    with ser.atomic_write(path) as f:
        ser.write_header(f, ser.DATASET_MAGIC)
        for x in (n, v, k, flags):
            ser.write_u32(f, x)
        if dataset.has_truth:
            t0 = dataset.samples[0].truth
            for x in (t0.s_joint.shape[0], t0.s_fc.shape[0], t0.s_sc.shape[0]):
                ser.write_u32(f, x)
        for s in dataset.samples:
            ser.write_f32_block(f, s.fc.edges())
            ser.write_f32_block(f, s.sc.edges())
            if dataset.has_traits:
                ser.write_f32_block(f, s.traits)
            if dataset.has_truth:
                ser.write_f32_block(f, s.truth.s_joint)
                ser.write_f32_block(f, s.truth.s_fc)
                ser.write_f32_block(f, s.truth.s_sc)


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        ser.read_header(f, ser.DATASET_MAGIC)
        n = ser.read_u32(f, "subject count")
        v = ser.read_u32(f, "node count")
        k = ser.read_u32(f, "trait count")
        flags = ser.read_u32(f, "flags")
        has_traits = bool(flags & _FLAG_TRAITS)
        has_truth = bool(flags & _FLAG_TRUTH)
        if has_truth:
            kj = ser.read_u32(f, "k_joint")
            kf = ser.read_u32(f, "k_fc")
            ks = ser.read_u32(f, "k_sc")
        d = edge_count(v)
        samples = []
        for i in range(n):
            fc_e = ser.read_f32_block(f, d, f"sample {i} FC edges")
            sc_e = ser.read_f32_block(f, d, f"sample {i} SC edges")
            traits = ser.read_f32_block(f, k, f"sample {i} traits") if has_traits else None
            truth = None
            if has_truth:
                truth = FactorScores(
                    s_joint=ser.read_f32_block(f, kj, f"sample {i} joint scores"),
                    s_fc=ser.read_f32_block(f, kf, f"sample {i} FC scores"),
                    s_sc=ser.read_f32_block(f, ks, f"sample {i} SC scores"),
                )
            samples.append(PairedSample(
                fc=Connectome(devectorize(fc_e, v), FC),
                sc=Connectome(devectorize(sc_e, v), SC),
                traits=traits, truth=truth))
        trailing = f.read(1)
        if trailing:
            raise FileFormatError("trailing bytes after final sample record")
    return Dataset(samples)
