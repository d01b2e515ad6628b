#!/usr/bin/env python3
"""Print the instance dimension tables and compare them with reference values.

Usage: python scripts/dims_table.py [--format text|csv|json]

The first table lists network size and the state/control split per case.
The second lists nvar, ncon and the size of the dense reduced matrix for a
given scenario count.  The reference columns are the published figures; a
mismatch is flagged in the last column.  The per-scenario inequality count
implied by the reference ncon is shown next to ours.
"""
import argparse
import csv
import json
import sys

from blockipm.opf import load_case, opf_dims, resolve_case

NETWORK_REF = {  # case: (buses, lines, gens, n_x, n_u)
    "case118": (118, 186, 54, 181, 107),
    "case1354pegase": (1354, 1991, 260, 2447, 519),
    "case2869pegase": (2869, 4582, 510, 5227, 1019),
    "case9241pegase": (9241, 16049, 1445, 17036, 2889),
}
SIZE_REF = [  # (case, N, nvar, ncon, K_hat MiB)
    ("case1354pegase", 8, 20095, 53520, 2.1),
    ("case2869pegase", 8, 42835, 119216, 7.9),
    ("case9241pegase", 8, 139177, 404640, 63.7),
    ("case1354pegase", 512, 1253383, 4425280, 2.1),
]


def network_rows():
    rows = []
    for name, ref in NETWORK_REF.items():
        d = opf_dims(load_case(resolve_case(name)), 1)
        got = (d["buses"], d["lines"], d["gens"], d["n_x"], d["n_u"])
        rows.append(dict(case=name, buses=got[0], lines=got[1], gens=got[2], n_x=got[3], n_u=got[4],
                         match="yes" if got == ref else f"no (ref {ref})"))
    return rows


def size_rows():
    rows = []
    for name, N, nvar, ncon, mib in SIZE_REF:
        d = opf_dims(load_case(resolve_case(name)), N)
        notes = []
        if d["nvar"] != nvar:
            notes.append(f"nvar ref {nvar}")
        if d["ncon"] != ncon:
            notes.append(f"ncon ref {ncon}")
        if round(d["khat_mib"], 1) != mib:
            notes.append(f"K_hat ref {mib}")
        implied_m = ncon / N - d["n_x"]
        rows.append(dict(case=name, N=N, nvar=d["nvar"], ncon=d["ncon"], khat_mib=round(d["khat_mib"], 1),
                         m=d["m"], implied_m=implied_m if implied_m != int(implied_m) else int(implied_m),
                         match="yes" if not notes else "no (" + ", ".join(notes) + ")"))
    return rows


def emit(rows, fmt, out):
    if fmt == "json":
        json.dump(rows, out, indent=2)
        out.write("\n")
    elif fmt == "csv":
        w = csv.DictWriter(out, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    else:
        cols = list(rows[0])
        width = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
        out.write("  ".join(c.rjust(width[c]) for c in cols) + "\n")
        for r in rows:
            out.write("  ".join(str(r[c]).rjust(width[c]) for c in cols) + "\n")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")
    args = p.parse_args(argv)
    emit(network_rows(), args.format, sys.stdout)
    sys.stdout.write("\n")
    emit(size_rows(), args.format, sys.stdout)


if __name__ == "__main__":
    main()
