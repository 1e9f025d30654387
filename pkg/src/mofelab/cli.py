"""Command-line entry point: ``mofelab {gen,train,eval,sweep,gradcheck}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .config import VARIANTS, ExperimentConfig, load_config
from .errors import MofeError


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value experiment config (defaults used when omitted)")
    common.add_argument("--out", help="output directory (default: out_dir from the config)")
    common.add_argument("--seed", type=int, help="override the config seed")

    p = argparse.ArgumentParser(prog="mofelab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("gen", parents=[common], help="write synthetic train/val/test splits")
    t = sub.add_parser("train", parents=[common], help="two-stage training")
    t.add_argument("--data", help="dataset prefix (<prefix>.train.mmds ...); generated when omitted")
    t.add_argument("--variant", choices=VARIANTS)
    e = sub.add_parser("eval", parents=[common], help="evaluate all modality subsets")
    e.add_argument("--checkpoint", help="model checkpoint (default: <out>/model.ckpt)")
    e.add_argument("--data", help="dataset prefix; generated from the config when omitted")
    e.add_argument("--variant", choices=VARIANTS)
    s = sub.add_parser("sweep", parents=[common], help="train/evaluate over a lambda list")
    s.add_argument("--data")
    s.add_argument("--lambdas", help="comma separated (default 0,0.01,0.05,0.1,0.2,0.5,1)")
    g = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    g.add_argument("--corrupt", help=argparse.SUPPRESS)
    return p


def _config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    return config


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        config = _config(args)
        if args.verb == "gen":
            for split, path in harness.cmd_gen(config, args.out).items():
                print(path)
        elif args.verb == "train":
            manifest = harness.cmd_train(config, args.data, args.out, args.variant)
            for path in manifest.checkpoints + manifest.reports:
                print(path)
        elif args.verb == "eval":
            out = Path(args.out or config.out_dir)
            ckpt = args.checkpoint or out / "model.ckpt"
            report, path = harness.cmd_eval(config, ckpt, args.data, out, args.variant)
            print(path)
            print(f"CR {report.cr:.6f}  mean score {report.mean_score:.6f}  mean ECE {report.mean_ece:.6f}")
        elif args.verb == "sweep":
            rows = harness.cmd_sweep(config, args.lambdas, args.data, args.out)
            for lam, score, cr, ece in rows:
                print(f"lambda={lam:<6g} score={score:.6f} cr={cr:.6f} ece={ece:.6f}")
        elif args.verb == "gradcheck":
            return 0 if harness.cmd_gradcheck(config, args.corrupt) else 3
    except MofeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
