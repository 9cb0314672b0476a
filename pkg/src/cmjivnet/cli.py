"""Command-line entry point for the full synthetic pipeline.

Subcommands: synth, train, finetune, eval, traverse, predict-traits,
export-latents. Exit codes: 0 success, 1 usage/configuration error,
2 I/O or file-format error, 3 numerical failure. All file outputs are
written to a temporary path and renamed, so failures leave no partial
files. Every run prints a header echoing the effective seed.

Set CMJIV_THREADS to cap the threads used by the numerical backend; it
must be honored before numpy loads, which is why this module configures
the environment before importing anything numeric.
"""

from __future__ import annotations

import os
import sys


def _cap_threads() -> None:
    cap = os.environ.get("CMJIV_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_cap_threads()

import argparse

import numpy as np

from . import serialization as ser
from .config import ConfigError, known_keys, load_config
from .data import edge_count, generate_synthetic, load_dataset, save_dataset
from .evaluation import evaluate_reconstruction, export_latents, ridge_trait_cv, traverse_joint
from .model import latent_means
from .serialization import FileFormatError
from .training import finetune, fit, load_checkpoint, restore, save_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

FEATURE_SETS = ("joint", "fc", "sc", "concat")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="key=value config file "
                       f"(known keys: {', '.join(known_keys()[:4])}, ...)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key; repeatable")
    p.add_argument("--seed", type=int, default=None,
                   help="master seed for all randomness (default 42)")


def _effective_config(args, default_seed: int = 42):
    cfg = load_config(getattr(args, "config", None), getattr(args, "set", []))
    if args.seed is not None:
        cfg.apply_seed(args.seed)
        seed = args.seed
    elif getattr(args, "config", None) is None and not getattr(args, "set", []):
        cfg.apply_seed(default_seed)
        seed = default_seed
    else:
        seed = cfg.train.seed
    return cfg, seed


def _header(command: str, seed: int) -> None:
    print(f"cmjivnet {command} seed={seed}")


def _write_kv(path: str, lines) -> None:
    with ser.atomic_write(path) as f:
        for line in lines:
            f.write((line + "\n").encode())


def cmd_synth(args) -> int:
    cfg, seed = _effective_config(args)
    _header("synth", seed)
    spec = cfg.synth
    spec.validate()
    dataset = generate_synthetic(spec)
    save_dataset(args.out, dataset)
    n_traits = dataset.samples[0].traits.shape[0] if dataset.has_traits else 0
    print(f"wrote {args.out}: N={len(dataset)} V={dataset.v} "
          f"D={edge_count(dataset.v)} traits={n_traits}")
    return EXIT_OK


def _metrics_path(args) -> str:
    return args.metrics if args.metrics else f"{args.out}.metrics.csv"


def cmd_train(args) -> int:
    cfg, seed = _effective_config(args)
    _header("train", seed)
    if args.epochs is not None:
        cfg.train.max_epochs = args.epochs
    dataset = load_dataset(args.data)
    ckpt = fit(dataset, cfg.train, metrics_path=_metrics_path(args))
    save_checkpoint(args.out, ckpt)
    print(f"wrote {args.out} after {ckpt.epoch} epochs "
          f"(metrics: {_metrics_path(args)})")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg, seed = _effective_config(args)
    _header("finetune", seed)
    dataset = load_dataset(args.data)
    start = load_checkpoint(args.checkpoint)
    ckpt = finetune(start, dataset, cfg.train, metrics_path=_metrics_path(args))
    save_checkpoint(args.out, ckpt)
    print(f"wrote {args.out} (stage1={cfg.train.stage1_epochs} "
          f"stage2={cfg.train.stage2_epochs} epochs, traits={ckpt.n_traits})")
    return EXIT_OK


def cmd_eval(args) -> int:
    _header("eval", args.seed if args.seed is not None else 42)
    seed = args.seed if args.seed is not None else 42
    dataset = load_dataset(args.data)
    model, _, _ = restore(load_checkpoint(args.checkpoint), dataset.v)
    report = evaluate_reconstruction(model, dataset, mode=args.mode)
    lines = [f"seed={seed}", f"mode={args.mode}", *report.lines()]
    _write_kv(args.out, lines)
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_traverse(args) -> int:
    seed = args.seed if args.seed is not None else 42
    _header("traverse", seed)
    dataset = load_dataset(args.data)
    model, _, _ = restore(load_checkpoint(args.checkpoint), dataset.v)
    res = traverse_joint(model, dataset, steps=args.steps, extent=args.extent)
    v = dataset.v
    iu, iv = np.tril_indices(v, k=-1)
    with ser.atomic_write(f"{args.out}.slopes.csv") as f:
        f.write(b"edge,u,v,slope_fc,slope_sc,delta_fc,delta_sc\n")
        for e in range(len(iu)):
            f.write((f"{e},{iu[e]},{iv[e]},{res.slope_fc[e]:.9g},{res.slope_sc[e]:.9g},"
                     f"{res.delta_fc[e]:.9g},{res.delta_sc[e]:.9g}\n").encode())
    q = res.quadrants
    qlines = [f"seed={seed}", f"steps={args.steps}", f"extent={args.extent:.9g}",
              f"sigma={res.sigma:.9g}"]
    qlines += [f"{k}={q[k]:.9g}" if isinstance(q[k], float) else f"{k}={q[k]}"
               for k in ("up_up", "up_down", "down_up", "down_down",
                         "no_change", "n_changing")]
    _write_kv(f"{args.out}.quadrants.csv", ["key,value"]
              + [line.replace("=", ",", 1) for line in qlines])
    print(f"wrote {args.out}.slopes.csv and {args.out}.quadrants.csv "
          f"(sigma={res.sigma:.4g}, up_up={q['up_up']:.4g})")
    return EXIT_OK


def cmd_predict_traits(args) -> int:
    seed = args.seed if args.seed is not None else 42
    _header("predict-traits", seed)
    if args.features not in FEATURE_SETS:
        raise ConfigError(f"unknown feature set {args.features!r}; "
                          f"valid options: {', '.join(FEATURE_SETS)}")
    dataset = load_dataset(args.data)
    if not dataset.has_traits:
        raise ConfigError("dataset has no traits to predict")
    model, _, _ = restore(load_checkpoint(args.checkpoint), dataset.v)
    fc_mats = np.stack([s.fc.matrix for s in dataset.samples])
    sc_mats = np.stack([s.sc.matrix for s in dataset.samples])
    mu_j, mu_f, mu_s = latent_means(model, fc_mats, sc_mats)
    feats = {"joint": mu_j, "fc": mu_f, "sc": mu_s,
             "concat": np.concatenate([mu_j, mu_f, mu_s], axis=1)}[args.features]
    rs = ridge_trait_cv(feats, dataset.traits_matrix(), folds=5, seed=seed)
    with ser.atomic_write(args.out) as f:
        f.write(b"trait,r\n")
        for name, r in rs.items():
            f.write(f"{name},{r:.9g}\n".encode())
    print(f"wrote {args.out} (features={args.features}): "
          + " ".join(f"{k}={v:.4g}" for k, v in rs.items()))
    return EXIT_OK


def cmd_export_latents(args) -> int:
    seed = args.seed if args.seed is not None else 42
    _header("export-latents", seed)
    dataset = load_dataset(args.data)
    model, _, _ = restore(load_checkpoint(args.checkpoint), dataset.v)
    export_latents(model, dataset, args.out)
    print(f"wrote {args.out}: {3 * len(dataset)} rows")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="cmjivnet",
                     description="Dual-VAE factorization of paired FC/SC connectomes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output dataset path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train from scratch")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--metrics", help="per-epoch metrics CSV (default <out>.metrics.csv)")
    p.add_argument("--epochs", type=int, default=None,
                   help="override train.max_epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="two-stage supervised fine-tuning")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="starting checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="per-epoch metrics CSV (default <out>.metrics.csv)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="reconstruction / cross-modal metrics")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("both", "sc2fc", "fc2sc"), default="both")
    p.add_argument("--out", required=True, help="key=value report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("traverse", help="decode along PC1 of the joint latents")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=21)
    p.add_argument("--extent", type=float, default=3.0,
                   help="traversal endpoints in units of PC1 std")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_traverse)

    p = sub.add_parser("predict-traits", help="ridge trait prediction from latents")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--features", default="concat",
                   help="one of joint|fc|sc|concat (default concat)")
    p.add_argument("--out", required=True, help="per-trait r CSV path")
    p.set_defaults(func=cmd_predict_traits)

    p = sub.add_parser("export-latents", help="dump posterior means as CSV")
    _add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_latents)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
