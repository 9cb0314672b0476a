"""Probe run for the acceptance-scale training configuration.

Fits on the train split of the default synthetic dataset and prints the
disentanglement / recovery / reconstruction probes every few epochs, so
hyperparameters can be judged against the target thresholds.
"""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from cmjivnet.data import SyntheticSpec, generate_synthetic, split
from cmjivnet.evaluation import pairwise_angles, pearson_individual
from cmjivnet.model import latent_means, run_model
from cmjivnet.optim import AdamState
from cmjivnet.training import TrainConfig, build_model, train_epoch
from cmjivnet.data import sc_log_stats


def r2(targets: np.ndarray, feats: np.ndarray) -> float:
    x = np.concatenate([feats, np.ones((feats.shape[0], 1))], axis=1)
    beta, *_ = np.linalg.lstsq(x, targets, rcond=None)
    resid = targets - x @ beta
    return 1.0 - (resid ** 2).sum() / ((targets - targets.mean(0)) ** 2).sum()


def probes(model, train, test):
    fc_tr = np.stack([s.fc.matrix for s in train.samples])
    sc_tr = np.stack([s.sc.matrix for s in train.samples])
    model.eval()
    mu_j, mu_f, mu_s = latent_means(model, fc_tr, sc_tr)
    ang = pairwise_angles(mu_j, mu_f, mu_s)
    tr = train.truth_matrix()
    r2_joint = r2(tr.s_joint, mu_j)
    r2_fc = r2(tr.s_joint, mu_f)
    r2_sc = r2(tr.s_joint, mu_s)
    # held-out reconstruction
    fc_te = np.stack([s.fc.matrix for s in test.samples])
    sc_te = np.stack([s.sc.matrix for s in test.samples])
    state = run_model(model, fc_te, sc_te, noise=None)
    r_fc, _, _ = pearson_individual(test.fc_edges(), state.fc_mu_edges.data)
    r_sc, _, _ = pearson_individual(test.sc_edges(), state.sc_rate_edges.data)
    model.train()
    return dict(a_jf=ang["joint_fc"][0], a_js=ang["joint_sc"][0], a_fs=ang["fc_sc"][0],
                r2j=r2_joint, r2f=r2_fc, r2s=r2_sc, gap=r2_joint - max(r2_fc, r2_sc),
                p_fc=r_fc, p_sc=r_sc)


def main():
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100
    ds = generate_synthetic(SyntheticSpec())
    train, test = split(ds, (0.875, 0.125), seed=42)
    print(f"train={len(train)} test={len(test)}", flush=True)
    cfg = TrainConfig(seed=42, max_epochs=epochs)
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, rng, v=ds.v)
    model.set_sc_stats(*sc_log_stats(train))
    opt = AdamState(lr=cfg.lr)
    p = probes(model, train, test)
    print("epoch 0:", " ".join(f"{k}={v:.3f}" for k, v in p.items()), flush=True)
    t0 = time.time()
    for epoch in range(1, epochs + 1):
        m = train_epoch(model, train, cfg, opt, rng)
        if epoch % 5 == 0 or epoch == epochs:
            p = probes(model, train, test)
            print(f"epoch {epoch} ({time.time()-t0:.0f}s): "
                  f"loss={m['total']:.1f} fc={m['fc']:.1f} sc={m['sc']:.1f} "
                  f"kle={m['kl_enc']:.1f} klf={m['kl_fusion']:.2f} mi={m['mi']:.3f} "
                  f"or={m['ortho']:.3f} | "
                  + " ".join(f"{k}={v:.3f}" for k, v in p.items()), flush=True)
    print(f"total {time.time()-t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
