"""Full synthetic pipeline demo: generate, train, fine-tune, evaluate,
traverse, and predict traits, all through the CLI layer.

Writes everything under ./runs/demo (override with --workdir). Runtime is
kept small by default (12 epochs); pass --epochs for a longer run.
"""

import argparse
import pathlib
import sys

sys.path.insert(0, "src")

from cmjivnet.cli import main as cli


def sh(args):
    print(f"\n$ cmjivnet {' '.join(args)}")
    code = cli(args)
    if code != 0:
        sys.exit(code)


def run(workdir: pathlib.Path, epochs: int, seed: int) -> None:
    workdir.mkdir(parents=True, exist_ok=True)
    data = workdir / "synthetic.ds"
    ckpt = workdir / "model.ckpt"
    tuned = workdir / "model.tuned.ckpt"
    seed_args = ["--seed", str(seed)]

    sh(["synth", *seed_args, "--out", str(data)])
    sh(["train", *seed_args, "--epochs", str(epochs),
        "--data", str(data), "--out", str(ckpt)])
    sh(["finetune", *seed_args,
        "--set", "train.stage1_epochs=5", "--set", "train.stage2_epochs=5",
        "--data", str(data), "--checkpoint", str(ckpt), "--out", str(tuned)])
    sh(["eval", *seed_args, "--checkpoint", str(ckpt), "--data", str(data),
        "--mode", "both", "--out", str(workdir / "recon.kv")])
    sh(["eval", *seed_args, "--checkpoint", str(ckpt), "--data", str(data),
        "--mode", "sc2fc", "--out", str(workdir / "sc2fc.kv")])
    sh(["traverse", *seed_args, "--checkpoint", str(ckpt), "--data", str(data),
        "--out", str(workdir / "traversal")])
    for feats in ("joint", "concat"):
        sh(["predict-traits", *seed_args, "--features", feats,
            "--checkpoint", str(tuned), "--data", str(data),
            "--out", str(workdir / f"traits.{feats}.csv")])
    sh(["export-latents", *seed_args, "--checkpoint", str(ckpt),
        "--data", str(data), "--out", str(workdir / "latents.csv")])
    print(f"\nall outputs in {workdir}/")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/demo")
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--seed", type=int, default=42)
    a = ap.parse_args()
    run(pathlib.Path(a.workdir), a.epochs, a.seed)
