"""romance-plots: render figures from harness CSV outputs.

Series are given as label=path[,path...] pairs; a bare path gets its
filename as the label.
"""

from __future__ import annotations

import argparse
import sys

from . import figures
from .frames import SchemaError


def _parse_series(items):
    series = {}
    for item in items:
        if "=" in item:
            label, paths = item.split("=", 1)
            series[label] = paths.split(",")
        else:
            series[item] = [item]
    return series


def build_parser():
    p = argparse.ArgumentParser(prog="romance-plots")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("curves", help="learning curves with 95%% CI bands")
    c.add_argument("series", nargs="+", help="label=metrics.csv[,more.csv]")
    c.add_argument("--out", required=True)
    c.add_argument("--protocol", default="natural")
    c.add_argument("--column", default="win_rate", choices=["win_rate", "mean_return"])

    h = sub.add_parser("heatmap", help="archive pairwise-distance heatmap")
    h.add_argument("distance_csv")
    h.add_argument("--out", required=True)

    q = sub.add_parser("quality", help="attacker quality bars from label,quality CSV")
    q.add_argument("quality_csv")
    q.add_argument("--out", required=True)

    s = sub.add_parser("sweep", help="budget-generalization curves from sweep CSVs")
    s.add_argument("series", nargs="+", help="label=sweep.csv")
    s.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "curves":
            figures.plot_learning_curves(
                _parse_series(args.series), args.out, args.protocol, args.column
            )
        elif args.command == "heatmap":
            figures.plot_distance_heatmap(args.distance_csv, args.out)
        elif args.command == "quality":
            figures.plot_quality_bars(args.quality_csv, args.out)
        elif args.command == "sweep":
            series = {k: v[0] for k, v in _parse_series(args.series).items()}
            figures.plot_budget_sweep(series, args.out)
    except (SchemaError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
