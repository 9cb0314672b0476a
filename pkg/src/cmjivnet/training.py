"""End-to-end training loop, two-stage supervised fine-tuning, and
checkpoint persistence.

Determinism contract: a single PCG64 generator seeded from the config
drives model initialization, epoch shuffles, reparameterization noise, and
the MI permutations, in a fixed order (per batch: the five noise blocks,
then the permutation). Checkpoints persist parameters, buffers, optimizer
moments, and the raw generator state, so resuming an interrupted run
reproduces the uninterrupted one bitwise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import serialization as ser
from .autodiff import Tape, backward
from .autodiff import Tensor
from .data import Dataset, sc_log_stats
from .decoders import DECODER_VARIANTS, IMAGE_VARIANT
from .losses import LossWeights, supervised_loss, total_loss
from .model import CmJivNet, compute_loss_parts, draw_noise, run_model, z_cat_features
from .optim import AdamState, adam_step

LOSS_COLUMNS = ("fc", "sc", "kl_enc", "kl_fusion", "mi", "ortho", "total")


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    max_epochs: int = 100
    seed: int = 42
    weights: LossWeights = field(default_factory=LossWeights)
    decoder_variant: str = IMAGE_VARIANT
    hidden_dim: int = 192
    d_z: int = 64
    traits: Optional[tuple] = None    # trait column indices; None = all
    stage1_epochs: int = 20
    stage2_epochs: int = 30

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (MI and correlation need pairs)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.max_epochs < 0 or self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.decoder_variant not in DECODER_VARIANTS:
            raise ValueError(f"unknown decoder variant {self.decoder_variant!r}")
        self.weights.validate()


@dataclass
class Checkpoint:
    config: TrainConfig
    epoch: int
    n_traits: int
    v: int
    state: dict          # model parameters and buffers, name -> ndarray
    opt_state: dict      # adam moments as flat records, name -> ndarray
    rng_words: list      # six u64 words of PCG64 state


def build_model(config: TrainConfig, rng: np.random.Generator,
                v: int = 68, n_traits: int = 0) -> CmJivNet:
    return CmJivNet(rng, d_z=config.d_z, hidden_dim=config.hidden_dim,
                    decoder_variant=config.decoder_variant, v=v, n_traits=n_traits)


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def _stacked(dataset: Dataset):
    fc_mats = np.stack([s.fc.matrix for s in dataset.samples])
    sc_mats = np.stack([s.sc.matrix for s in dataset.samples])
    return fc_mats, sc_mats, dataset.fc_edges(), dataset.sc_edges()


def train_epoch(model: CmJivNet, dataset: Dataset, config: TrainConfig,
                opt: AdamState, rng: np.random.Generator) -> dict:
    """One seeded pass over the dataset; returns mean loss terms.

    Batches smaller than 2 (a trailing remainder of 1) are skipped since
    the MI permutation needs pairs.
    """
    fc_mats, sc_mats, fc_edges, sc_edges = _stacked(dataset)
    named = model.named_parameters()
    order = rng.permutation(len(dataset))
    sums = {k: 0.0 for k in LOSS_COLUMNS}
    count = 0
    model.train()
    for idx in _batches(len(dataset), config.batch_size, order):
        noise = draw_noise(rng, len(idx), model.d_z, model.dtype)
        mi_perm = rng.permutation(len(idx))
        with Tape() as tape:
            state = run_model(model, fc_mats[idx], sc_mats[idx], noise)
            parts = compute_loss_parts(model, state, fc_edges[idx], sc_edges[idx],
                                       mi_perm, config.weights)
            loss = total_loss(parts, config.weights)
        if not np.isfinite(loss.data):
            raise FloatingPointError("total loss is not finite")
        grads = backward(tape, loss, params=list(named.values()))
        adam_step(opt, named, {k: grads[p] for k, p in named.items()})
        for k, v in parts.values().items():
            sums[k] += v
        sums["total"] += float(loss.data)
        count += 1
    return {k: (s / max(count, 1)) for k, s in sums.items()}


def _write_metrics_csv(path: str, rows: list) -> None:
    with ser.atomic_write(path) as f:
        header = "epoch,stage," + ",".join(LOSS_COLUMNS) + ",sup\n"
        f.write(header.encode())
        for row in rows:
            cells = [str(row["epoch"]), row.get("stage", "fit")]
            cells += [f"{row.get(k, float('nan')):.9g}" for k in LOSS_COLUMNS]
            cells.append(f"{row.get('sup', float('nan')):.9g}")
            f.write((",".join(cells) + "\n").encode())


def fit(dataset: Dataset, config: TrainConfig, metrics_path: Optional[str] = None,
        start: Optional[Checkpoint] = None) -> Checkpoint:
    """Train for max_epochs; optionally resume from a saved checkpoint."""
    config.validate()
    if start is None:
        rng = np.random.default_rng(config.seed)
        model = build_model(config, rng, v=dataset.v)
        model.set_sc_stats(*sc_log_stats(dataset))
        opt = AdamState(lr=config.lr)
        first_epoch = 0
    else:
        model, opt, rng = restore(start, dataset.v)
        first_epoch = start.epoch
    rows = []
    for epoch in range(first_epoch, config.max_epochs):
        metrics = train_epoch(model, dataset, config, opt, rng)
        rows.append({"epoch": epoch + 1, **metrics})
    if metrics_path is not None:
        _write_metrics_csv(metrics_path, rows)
    return make_checkpoint(model, opt, config, max(config.max_epochs, first_epoch), rng)


def _sup_loss_for(model: CmJivNet, y_hat: Tensor, y_batch: np.ndarray,
                  config: TrainConfig):
    y = Tensor(np.asarray(y_batch, dtype=model.dtype))
    return supervised_loss(y_hat, y, config.weights)


def _trait_columns(dataset: Dataset, config: TrainConfig) -> np.ndarray:
    traits = dataset.traits_matrix()
    if config.traits is not None:
        traits = traits[:, list(config.traits)]
    return traits


def finetune(start: Checkpoint, dataset: Dataset, config: TrainConfig,
             metrics_path: Optional[str] = None) -> Checkpoint:
    """Two-stage supervised fine-tuning on trait targets.

    Stage 1 freezes everything except the regression heads and fits them on
    precomputed concatenated posterior means. Stage 2 unfreezes the full
    model and minimizes L_sup + ft * L_total, with trait predictions read
    from the posterior means of the same forward pass.
    """
    config.validate()
    if not dataset.has_traits:
        raise ValueError("fine-tuning requires a dataset with traits")
    traits = _trait_columns(dataset, config)
    n_traits = traits.shape[1]
    model, _, rng = restore(start, dataset.v)
    if model.heads is None or model.n_traits != n_traits:
        model.add_heads(rng, n_traits)
    opt = AdamState(lr=config.lr)
    rows = []

    # Stage 1: heads only, on frozen eval-mode features.
    model.eval()
    fc_mats, sc_mats, _, _ = _stacked(dataset)
    feats = z_cat_features(model, fc_mats, sc_mats)
    head_params = {f"heads.{k}": v for k, v in model.heads.named_parameters().items()}
    for epoch in range(config.stage1_epochs):
        order = rng.permutation(len(dataset))
        sup_sum, count = 0.0, 0
        for idx in _batches(len(dataset), config.batch_size, order):
            with Tape() as tape:
                y_hat = model.heads(Tensor(feats[idx].astype(model.dtype)))
                loss = _sup_loss_for(model, y_hat, traits[idx], config)
            grads = backward(tape, loss, params=list(head_params.values()))
            adam_step(opt, head_params, {k: grads[p] for k, p in head_params.items()})
            sup_sum += float(loss.data)
            count += 1
        rows.append({"epoch": epoch + 1, "stage": "stage1", "sup": sup_sum / max(count, 1)})

    # Stage 2: everything unfrozen, weak reconstruction regularization.
    fc_mats, sc_mats, fc_edges, sc_edges = _stacked(dataset)
    named = model.named_parameters()
    model.train()
    for epoch in range(config.stage2_epochs):
        order = rng.permutation(len(dataset))
        sums = {k: 0.0 for k in (*LOSS_COLUMNS, "sup")}
        count = 0
        for idx in _batches(len(dataset), config.batch_size, order):
            noise = draw_noise(rng, len(idx), model.d_z, model.dtype)
            mi_perm = rng.permutation(len(idx))
            with Tape() as tape:
                state = run_model(model, fc_mats[idx], sc_mats[idx], noise)
                parts = compute_loss_parts(model, state, fc_edges[idx], sc_edges[idx],
                                           mi_perm, config.weights)
                recon = total_loss(parts, config.weights)
                t = state.triple
                z_cat = ad.concat([t.joint.mu, t.fc_ind.mu, t.sc_ind.mu], axis=1)
                y_hat = model.heads(z_cat)
                sup = _sup_loss_for(model, y_hat, traits[idx], config)
                loss = sup + recon * config.weights.ft
            if not np.isfinite(loss.data):
                raise FloatingPointError("fine-tune loss is not finite")
            grads = backward(tape, loss, params=list(named.values()))
            adam_step(opt, named, {k: grads[p] for k, p in named.items()})
            for k, v in parts.values().items():
                sums[k] += v
            sums["total"] += float(recon.data)
            sums["sup"] += float(sup.data)
            count += 1
        rows.append({"epoch": epoch + 1, "stage": "stage2",
                     **{k: s / max(count, 1) for k, s in sums.items()}})
    if metrics_path is not None:
        _write_metrics_csv(metrics_path, rows)
    return make_checkpoint(model, opt, config, start.epoch, rng, n_traits=n_traits)


def make_checkpoint(model: CmJivNet, opt: AdamState, config: TrainConfig,
                    epoch: int, rng: np.random.Generator,
                    n_traits: Optional[int] = None) -> Checkpoint:
    state = {k: v.copy() for k, v in model.state_dict().items()}
    opt_state = {"step": np.asarray(float(opt.step), dtype=np.float32)}
    for name, arr in opt.m.items():
        opt_state[f"m.{name}"] = arr.copy()
    for name, arr in opt.v.items():
        opt_state[f"v.{name}"] = arr.copy()
    return Checkpoint(config=config, epoch=epoch,
                      n_traits=model.n_traits if n_traits is None else n_traits,
                      v=model.v, state=state, opt_state=opt_state,
                      rng_words=ser.rng_state_words(rng))


def restore(ckpt: Checkpoint, v: Optional[int] = None):
    """Rebuild (model, optimizer, rng) from a checkpoint, bit-exact."""
    if v is not None and v != ckpt.v:
        raise ValueError(f"checkpoint was trained on V={ckpt.v}, dataset has V={v}")
    throwaway = np.random.default_rng(0)
    model = build_model(ckpt.config, throwaway, v=ckpt.v, n_traits=ckpt.n_traits)
    model.load_state_dict(ckpt.state)
    opt = AdamState(lr=ckpt.config.lr)
    opt.step = int(ckpt.opt_state["step"])
    for name, arr in ckpt.opt_state.items():
        if name.startswith("m."):
            opt.m[name[2:]] = arr.copy()
        elif name.startswith("v."):
            opt.v[name[2:]] = arr.copy()
    rng = ser.rng_from_state_words(ckpt.rng_words)
    return model, opt, rng


def _config_blob(ckpt: Checkpoint) -> bytes:
    cfg = asdict(ckpt.config)
    if cfg["traits"] is not None:
        cfg["traits"] = list(cfg["traits"])
    blob = {"config": cfg, "epoch": ckpt.epoch, "n_traits": ckpt.n_traits, "v": ckpt.v}
    return json.dumps(blob, sort_keys=True).encode("utf-8")


def _config_from_blob(raw: bytes) -> tuple:
    try:
        blob = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ser.FileFormatError(f"bad config blob: {e}") from None
    cfg = dict(blob["config"])
    cfg["weights"] = LossWeights(**cfg["weights"])
    if cfg["traits"] is not None:
        cfg["traits"] = tuple(cfg["traits"])
    return TrainConfig(**cfg), int(blob["epoch"]), int(blob["n_traits"]), int(blob["v"])


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    blob = _config_blob(ckpt)
    with ser.atomic_write(path) as f:
        ser.write_header(f, ser.CHECKPOINT_MAGIC)
        ser.write_u32(f, len(blob))
        f.write(blob)
        ser.write_u32(f, len(ckpt.state))
        for name in sorted(ckpt.state):
            ser.write_tensor_record(f, name, ckpt.state[name])
        ser.write_u32(f, len(ckpt.opt_state))
        for name in sorted(ckpt.opt_state):
            ser.write_tensor_record(f, name, ckpt.opt_state[name])
        for word in ckpt.rng_words:
            ser.write_u64(f, word)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        ser.read_header(f, ser.CHECKPOINT_MAGIC)
        blob_len = ser.read_u32(f, "config blob length")
        config, epoch, n_traits, v = _config_from_blob(
            ser.read_exact(f, blob_len, "config blob"))
        n_state = ser.read_u32(f, "state tensor count")
        state = dict(ser.read_tensor_record(f) for _ in range(n_state))
        n_opt = ser.read_u32(f, "optimizer tensor count")
        opt_state = dict(ser.read_tensor_record(f) for _ in range(n_opt))
        words = [ser.read_u64(f, f"rng word {i}") for i in range(6)]
        trailing = f.read(1)
        if trailing:
            raise ser.FileFormatError("trailing bytes after RNG state")
    return Checkpoint(config=config, epoch=epoch, n_traits=n_traits, v=v,
                      state=state, opt_state=opt_state, rng_words=words)
