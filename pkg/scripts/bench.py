#!/usr/bin/env python3
"""Run a small benchmark matrix and write one report row per configuration.

Usage: python scripts/bench.py [--cases case9,case118] [--scenarios 1,4]
                               [--strategies augmented,condensed,reduced]
                               [--groups 1,2] [--out bench.csv]

Each row has the columns of ``blockipm bench``.  Timings are wall-clock on the
current machine and only their ratios are meaningful.  Configurations where
the group count exceeds the scenario count are skipped.
"""
import argparse
import sys

from blockipm.cli import BENCH_COLUMNS, RunConfig, _format_rows, run_solve


def _list(cast):
    return lambda s: [cast(t) for t in s.split(",") if t]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cases", type=_list(str), default=["case9", "case118"])
    p.add_argument("--scenarios", type=_list(int), default=[1, 4])
    p.add_argument("--strategies", type=_list(str), default=["augmented", "condensed", "reduced"])
    p.add_argument("--groups", type=_list(int), default=[1])
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--format", choices=["text", "csv", "json"], default="csv")
    p.add_argument("--out", default="-")
    args = p.parse_args(argv)

    rows = []
    for case in args.cases:
        for N in args.scenarios:
            for strategy in args.strategies:
                for G in args.groups:
                    if G > N:
                        continue
                    cfg = RunConfig(case=case, N=N, sigma=args.sigma, seed=args.seed, strategy=strategy,
                                    groups=G, workers=1).validate()
                    row = run_solve(cfg)
                    row.pop("_result"), row.pop("_model")
                    rows.append(row)
                    print(f"{case} N={N} {strategy} G={G}: {row['status']} in {row['iters']} iterations, "
                          f"{row['total_s']:.2f} s", file=sys.stderr)
    text = _format_rows(rows, BENCH_COLUMNS, args.format)
    if args.out == "-":
        print(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")


if __name__ == "__main__":
    main()
