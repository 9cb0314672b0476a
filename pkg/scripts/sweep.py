"""Short probed runs over candidate generator/training tweaks."""

import sys
import time
from dataclasses import replace

import numpy as np

sys.path.insert(0, "src")
sys.path.insert(0, "scripts")

from probe_lib import full_probes, fmt

from cmjivnet.data import SyntheticSpec, generate_synthetic, split, sc_log_stats
from cmjivnet.optim import AdamState
from cmjivnet.training import (TrainConfig, build_model, make_checkpoint,
                               save_checkpoint, train_epoch)


def run(tag, spec, cfg, epochs, save_to=None):
    ds = generate_synthetic(spec)
    train, test = split(ds, (0.875, 0.125), seed=42)
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, rng, v=ds.v)
    model.set_sc_stats(*sc_log_stats(train))
    opt = AdamState(lr=cfg.lr)
    t0 = time.time()
    for epoch in range(1, epochs + 1):
        m = train_epoch(model, train, cfg, opt, rng)
        if epoch % 10 == 0 or epoch == epochs:
            p = full_probes(model, train, test)
            print(f"[{tag}] ep{epoch} ({time.time()-t0:.0f}s) "
                  f"fc={m['fc']:.0f} sc={m['sc']:.0f} kle={m['kl_enc']:.0f} "
                  f"klf={m['kl_fusion']:.1f} mi={m['mi']:.3f} | {fmt(p)}", flush=True)
    if save_to is not None:
        save_checkpoint(save_to, make_checkpoint(model, opt, cfg, epochs, rng))
    return model


if __name__ == "__main__":
    base_spec = SyntheticSpec()
    base_cfg = TrainConfig(seed=42, max_epochs=30)
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30

    spec_var = replace(base_spec, sc_scale=0.48, noise_sc=0.08)
    run("X1 var b16", spec_var, replace(base_cfg, batch_size=16), epochs,
        save_to="/tmp/final_X1.ckpt")
    run("X2 var b8", spec_var, replace(base_cfg, batch_size=8), epochs,
        save_to="/tmp/final_X2.ckpt")
