"""Standalone dry run of the supervised-gain acceptance protocol."""

import sys
import time
from dataclasses import replace

import numpy as np

sys.path.insert(0, "src")

from cmjivnet.data import SyntheticSpec, generate_synthetic
from cmjivnet.evaluation import _kfold_indices, ridge_trait_cv
from cmjivnet.model import predict_traits, run_model, z_cat_features
from cmjivnet.training import finetune, load_checkpoint, restore


def main():
    ckpt_path = sys.argv[1] if len(sys.argv) > 1 else "/tmp/final_X1.ckpt"
    s1 = int(sys.argv[2]) if len(sys.argv) > 2 else 20
    s2 = int(sys.argv[3]) if len(sys.argv) > 3 else 6
    lr = float(sys.argv[4]) if len(sys.argv) > 4 else None
    ds = generate_synthetic(SyntheticSpec(sc_scale=0.48, noise_sc=0.08))
    traits = ds.traits_matrix()
    ckpt = load_checkpoint(ckpt_path)

    model, _, _ = restore(ckpt, ds.v)
    model.eval()
    fc = np.stack([s.fc.matrix for s in ds.samples])
    sc = np.stack([s.sc.matrix for s in ds.samples])
    feats = z_cat_features(model, fc, sc)
    rs = ridge_trait_cv(feats, traits, folds=5, seed=0)
    base = float(np.mean(list(rs.values())))
    print(f"baseline ridge mean r = {base:.4f} "
          f"({' '.join(f'{k}={v:.3f}' for k, v in rs.items())})", flush=True)

    cfg = replace(ckpt.config, stage1_epochs=s1, stage2_epochs=s2)
    if lr is not None:
        cfg = replace(cfg, lr=lr)
    print(f"finetune cfg: stage1={s1} stage2={s2} lr={cfg.lr}", flush=True)
    n = len(ds)
    folds = _kfold_indices(n, 5, 0)
    preds = np.zeros_like(traits)
    t0 = time.time()
    for i, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(n), test_idx)
        tuned = finetune(ckpt, ds.subset(list(train_idx)), cfg)
        m, _, _ = restore(tuned, ds.v)
        m.eval()
        preds[test_idx] = predict_traits(m, fc[test_idx], sc[test_idx])
        print(f"fold {i}: {time.time()-t0:.0f}s", flush=True)
    per_trait = [float(np.corrcoef(preds[:, t], traits[:, t])[0, 1])
                 for t in range(traits.shape[1])]
    tuned_mean = float(np.mean(per_trait))
    print(f"finetuned mean r = {tuned_mean:.4f} "
          f"({' '.join(f'{r:.3f}' for r in per_trait)})")
    print(f"gain = {tuned_mean - base:.4f} (need >= 0.05)")


if __name__ == "__main__":
    main()
