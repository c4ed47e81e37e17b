"""Command-line entry points: train / eval / sweep / gen-attackers."""

from __future__ import annotations

import argparse
import sys

from . import harness


def build_parser():
    p = argparse.ArgumentParser(
        prog="romance",
        description="Robust cooperative MARL under budgeted action attacks.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train all configured seeds and evaluate")
    tr.add_argument("config")
    tr.add_argument("--out", default=None, help="override out_dir")

    ev = sub.add_parser("eval", help="evaluate one ego checkpoint")
    ev.add_argument("config")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--out", default=None)
    ev.add_argument("--trace", default=None, help="write per-tick JSONL trace here")

    sw = sub.add_parser("sweep", help="budget-generalization sweep for a checkpoint")
    sw.add_argument("config")
    sw.add_argument("--checkpoint", required=True)
    sw.add_argument("--out", default=None)

    ga = sub.add_parser("gen-attackers", help="generate held-out evaluation attackers")
    ga.add_argument("config")
    ga.add_argument("--out", default=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "train":
        return harness.run(args.config, args.out)
    if args.command == "eval":
        return harness.eval_checkpoint(args.config, args.checkpoint, args.out, args.trace)
    if args.command == "sweep":
        return harness.sweep_checkpoint(args.config, args.checkpoint, args.out)
    if args.command == "gen-attackers":
        return harness.gen_attackers(args.config, args.out)
    return 2


if __name__ == "__main__":
    sys.exit(main())
