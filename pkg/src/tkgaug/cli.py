"""``tkgaug`` command line: ingest, augment, train, eval, recovery."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline as P
from .data import DatasetError

log = logging.getLogger("tkgaug")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="top-level seed (overrides config)")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--output-dir", help="directory for all stage outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="tkgaug", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="parse a dataset into canonical files")
    sub.add_parser("augment", parents=[common], help="filter and classify candidate negatives")
    train = sub.add_parser("train", parents=[common], help="train a scorer")
    train.add_argument("--no-augment", action="store_true", help="plain baseline with uniform negatives")
    ev = sub.add_parser("eval", parents=[common], help="rank the evaluation split")
    ev.add_argument("--no-augment", action="store_true", help="evaluate the baseline checkpoint")
    ev.add_argument("--checkpoint", help="explicit checkpoint path")
    sub.add_parser("recovery", parents=[common], help="holdout recovery-rate sweep")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = P.load_config(args.config, seed=args.seed, threads=args.threads, output_dir=args.output_dir)
        if args.command == "ingest":
            s = P.run_ingest(cfg)
            print(f"entities {s['entities']}  relations {s['relations']}  timestamps {s['timestamps']}  "
                  f"facts {s['facts']} (train {s['train']} / valid {s['valid']} / test {s['test']})")
        elif args.command == "augment":
            s = P.run_augment(cfg)
            print(json.dumps({k: s[k] for k in ("candidates", "provenance", "classification")}, sort_keys=True))
        elif args.command == "train":
            path = P.run_train(cfg, augment=not args.no_augment)
            print(path)
        elif args.command == "eval":
            rep = P.run_eval(cfg, args.checkpoint, augment=not args.no_augment)
            print(f"mrr {rep.mrr!r}  hits@1 {rep.hits[1]!r}  hits@3 {rep.hits[3]!r}  hits@10 {rep.hits[10]!r}")
        elif args.command == "recovery":
            r = P.run_recovery(cfg)
            b = r["best"]
            print(f"best recovery {b['rate']!r} at m={b['m']} L_r={b['L_r']} L_t={b['L_t']}")
    except P.MissingStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
