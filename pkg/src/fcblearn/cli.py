"""Command line entry point: ``fcblearn {train,sweep,eval}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import ExperimentConfig, cmd_eval, cmd_sweep, cmd_train, load_config
from .meud import CheckpointError
from .training import NonFiniteError

log = logging.getLogger("fcblearn")

EXIT_FAILED_CELLS = 1
EXIT_USAGE = 2
EXIT_NONFINITE = 3


def _csv_list(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--dataset", help="dataset directory (idx/cifar10) or 'synth'")
    common.add_argument("--test-dataset", help="directory holding the test split, if different")
    common.add_argument("--format", choices=("idx", "cifar10", "synth"))
    common.add_argument("--name", help="dataset name used in CSV rows and file names")
    common.add_argument("--limit", type=int, help="use at most this many training samples")
    common.add_argument("--test-limit", type=int, help="use at most this many test samples")
    common.add_argument("--depth", type=int, help="hidden layers s (latent included)")
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--ff-epochs", type=int)
    common.add_argument("--ff-theta", type=float)
    common.add_argument("--trust-k", type=int)
    common.add_argument("--knn-k", type=int)
    common.add_argument("--subsample-cap", type=int)
    common.add_argument("--neutral-test-embedding", action="store_true", default=None,
                        help="zero the label block of test samples instead of embedding the true label")
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="fcblearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--variant", required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", parents=[common], help="train and evaluate over variants x r x seeds")
    p.add_argument("--variant", type=_csv_list, help="comma-separated variant list")
    p.add_argument("--r", type=_csv_list, help="comma-separated r list (default 25..500 step 25)")
    p.add_argument("--seed", type=_csv_list, help="comma-separated seed list")
    p.add_argument("--jobs", type=int, help="parallel cells")

    p = sub.add_parser("eval", parents=[common], help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    return parser


def config_from_args(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {
        "dataset": args.dataset, "test_dataset": args.test_dataset, "format": args.format,
        "name": args.name, "limit": args.limit, "test_limit": args.test_limit,
        "depth": args.depth, "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
        "ff_epochs": args.ff_epochs, "ff_theta": args.ff_theta, "trust_k": args.trust_k,
        "knn_k": args.knn_k, "subsample_cap": args.subsample_cap,
        "neutral_test_embedding": args.neutral_test_embedding, "out_dir": args.out_dir,
    }
    if args.command == "sweep":
        over.update(variants=args.variant, r=args.r, seeds=args.seed, jobs=args.jobs)
    if args.dataset == "synth" and args.format is None:
        over["format"] = "synth"
    elif args.dataset and args.dataset != "synth" and (args.format or cfg.format) == "synth":
        raise ValueError("--format idx|cifar10 is required for a dataset directory")
    return ExperimentConfig(**{**cfg.__dict__, **{k: v for k, v in over.items() if v is not None}})


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "train":
            result, paths = cmd_train(cfg, args.variant, args.r, args.seed)
            print(f"final loss {result.losses[-1]:.6g}")
            for kind, path in paths.items():
                print(f"{kind}: {path}")
            return 0
        if args.command == "sweep":
            path, failed = cmd_sweep(cfg)
            print(f"metrics: {path}")
            if failed:
                print(f"{failed} cell(s) failed; see error rows", file=sys.stderr)
                return EXIT_FAILED_CELLS
            return 0
        path = cmd_eval(cfg, args.checkpoint)
        print(f"metrics: {path}")
        return 0
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except (CheckpointError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
