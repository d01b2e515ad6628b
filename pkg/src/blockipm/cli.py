"""Command-line front end.

Commands: ``solve``, ``bench``, ``check-derivatives`` and ``dims``.  Exit
codes: 0 success, 2 input/parse error, 3 model construction error, 4 solver
did not reach Optimal, 5 derivative mismatch.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.batch import analyze, finite_difference_check
from .executor import ExecMode, Executor
from .ipm import IpmOptions, Status, solve
from .kkt import Strategy
from .opf import (
    CaseParseError,
    DisconnectedNetwork,
    build_block_opf,
    generate_scenarios,
    load_case,
    opf_dims,
    resolve_case,
)

EXIT_OK, EXIT_PARSE, EXIT_MODEL, EXIT_SOLVER, EXIT_DERIVATIVE = 0, 2, 3, 4, 5

BENCH_COLUMNS = ("instance", "N", "strategy", "G", "iters", "ad_s", "kkt_s", "total_s", "status", "objective")
DIMS_COLUMNS = ("case", "buses", "lines", "gens", "n_x", "n_u", "N", "nvar", "ncon", "khat_bytes", "khat_mib")

log = logging.getLogger("blockipm")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    case: str = "case9"
    N: int = 1
    sigma: float = 0.0
    contingencies: list = field(default_factory=list)
    seed: int = 0
    strategy: str = "reduced"
    groups: int = 1
    workers: int | None = None
    n_batch: int = 16
    tol: float = 1e-6
    max_iter: int = 300
    format: str = "text"
    deterministic: bool = True

    def validate(self) -> "RunConfig":
        if self.N < 1:
            raise ConfigError("the number of scenarios must be at least 1")
        if not 1 <= self.groups <= self.N:
            raise ConfigError(f"groups must lie in [1, N={self.N}]")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.n_batch < 1:
            raise ConfigError("batch must be at least 1")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.format not in ("text", "csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        try:
            Strategy(self.strategy)
        except ValueError:
            raise ConfigError(f"unknown strategy {self.strategy!r}") from None
        if not Path(resolve_case(self.case)).exists():
            raise ConfigError(f"case file not found: {self.case}")
        return self


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}
# flag destination -> RunConfig field
_FLAG_FIELDS = {"case": "case", "scenarios": "N", "sigma": "sigma", "seed": "seed", "strategy": "strategy",
                "groups": "groups", "workers": "workers", "batch": "n_batch", "tol": "tol",
                "max_iter": "max_iter", "format": "format", "deterministic": "deterministic",
                "contingencies": "contingencies"}


def load_config_file(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(obj) - _FIELDS - {"runs", "cases", "strategies", "groups_list"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return obj


def build_config(args, file_values: dict | None = None) -> RunConfig:
    """Merge defaults, then config file values, then explicitly given flags."""
    values = dataclasses.asdict(RunConfig())
    for k, v in (file_values or {}).items():
        if k in _FIELDS:
            values[k] = v
    for dest, name in _FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = v
    if isinstance(values["deterministic"], str):
        values["deterministic"] = values["deterministic"] == "on"
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


# ---------------------------------------------------------------------------
# output

def _format_rows(rows: list, columns, fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{c: r.get(c) for c in columns} for r in rows], indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue().rstrip("\n")
    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}" if abs(v) >= 1e-3 or v == 0 else f"{v:.3e}"
        return str(v)
    table = [list(columns)] + [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[j]) for row in table) for j in range(len(columns))]
    return "\n".join("  ".join(x.rjust(w) for x, w in zip(row, widths)) for row in table)


# ---------------------------------------------------------------------------
# commands

def _build_model(cfg: RunConfig):
    case = load_case(resolve_case(cfg.case))
    scen = generate_scenarios(case, cfg.N, cfg.sigma, cfg.contingencies, cfg.seed)
    return build_block_opf(case, scen)


def run_solve(cfg: RunConfig) -> dict:
    """Solve one configuration and return a report row (plus the result object under ``_result``)."""
    model = _build_model(cfg)
    mode = ExecMode.DETERMINISTIC if cfg.deterministic else ExecMode.FAST
    opts = IpmOptions(tol=cfg.tol, max_iter=cfg.max_iter, strategy=cfg.strategy, n_batch=cfg.n_batch)
    with Executor(cfg.N, cfg.groups, cfg.workers, mode) as ex:
        res = solve(model.nlp, ex, opts)
    t = res.timers()
    return {
        "instance": model.case.name, "N": cfg.N, "strategy": cfg.strategy, "G": cfg.groups,
        "iters": res.iterations, "ad_s": t["ad"], "kkt_s": t["kkt"], "total_s": t["total"],
        "status": res.status.value, "objective": res.objective, "_result": res, "_model": model,
    }


def cmd_solve(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    try:
        row = run_solve(cfg)
    except CaseParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (DisconnectedNetwork, ValueError) as exc:
        print(f"error: model construction failed: {exc}", file=sys.stderr)
        return EXIT_MODEL
    res = row["_result"]
    if cfg.format == "text":
        hdr = f"{'iter':>4} {'objective':>14} {'inf_pr':>9} {'inf_du':>9} {'mu':>8} {'alpha_pr':>8} {'alpha_du':>8}"
        print(hdr, file=out)
        for r in res.logs:
            print(f"{r.iter:4d} {r.objective:14.6e} {r.inf_pr:9.2e} {r.inf_du:9.2e} {r.mu:8.1e} "
                  f"{r.alpha_pr:8.2e} {r.alpha_du:8.2e}", file=out)
        print(file=out)
    print(_format_rows([row], BENCH_COLUMNS, cfg.format), file=out)
    return EXIT_OK if res.status is Status.OPTIMAL else EXIT_SOLVER


def bench_configs(base: RunConfig, file_values: dict | None) -> list:
    """Expand ``runs`` (explicit list) or the ``cases`` x ``strategies`` x ``groups_list`` matrix."""
    fv = file_values or {}
    if "runs" in fv:
        out = []
        for entry in fv["runs"]:
            vals = dataclasses.asdict(base)
            vals.update(entry)
            out.append(vals)
    else:
        out = []
        for case in fv.get("cases", [base.case]):
            for strat in fv.get("strategies", [base.strategy]):
                for G in fv.get("groups_list", [base.groups]):
                    vals = dataclasses.asdict(base)
                    vals.update(case=case, strategy=strat, groups=G)
                    out.append(vals)
    return [RunConfig(**v) for v in out]


def cmd_bench(configs: list, fmt: str = "csv", out=None, deterministic: bool = True) -> int:
    out = out or sys.stdout
    rows = []
    for cfg in configs:
        try:
            row = run_solve(cfg.validate())
            row.pop("_result"), row.pop("_model")
        except Exception as exc:  # a failing row is recorded and the run continues
            log.error("bench row %s/%s failed: %s", cfg.case, cfg.strategy, exc)
            row = {"instance": Path(cfg.case).stem, "N": cfg.N, "strategy": cfg.strategy, "G": cfg.groups,
                   "iters": 0, "ad_s": 0.0, "kkt_s": 0.0, "total_s": 0.0,
                   "status": f"Error: {type(exc).__name__}", "objective": float("nan")}
        rows.append(row)
    print(f"# deterministic={'on' if deterministic else 'off'}", file=sys.stderr)
    print(_format_rows(rows, BENCH_COLUMNS, fmt), file=out)
    return EXIT_OK


def check_derivatives(cfg: RunConfig, points: int = 5, seed: int | None = None):
    """FD comparison at random interior points of every block.

    Returns ``(max_relative_error, worst)`` where ``worst`` locates the entry.
    """
    model = _build_model(cfg)
    nlp = model.nlp
    info = analyze(nlp)
    labels = list(model.vmap.labels())
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    d = nlp.dims
    worst = (0.0, None)
    for k in range(points):
        x = _random_interior(rng, nlp.x_start, nlp.x_lower, nlp.x_upper)
        u = _random_interior(rng, nlp.u_start, nlp.u_lower, nlp.u_upper)
        y = rng.standard_normal((d.N, d.n_x))
        z = rng.standard_normal((d.N, d.m))
        for block in range(d.N):
            rep = finite_difference_check(nlp, x, u, y, z, block, info=info, labels=labels)
            if rep.max_relative > worst[0]:
                worst = (rep.max_relative, dict(point=k, block=block, **rep.worst))
    return worst


def _random_interior(rng, start, lower, upper):
    start = np.asarray(start, dtype=float)
    lower = np.broadcast_to(lower, start.shape)
    upper = np.broadcast_to(upper, start.shape)
    both = np.isfinite(lower) & np.isfinite(upper)
    t = rng.uniform(0.2, 0.8, start.shape)
    with np.errstate(invalid="ignore"):
        inside = np.where(both, lower + t * (upper - lower), start + 0.1 * rng.standard_normal(start.shape))
    return inside


def cmd_check_derivatives(cfg: RunConfig, out=None, tol: float = 1e-5) -> int:
    out = out or sys.stdout
    try:
        err, where = check_derivatives(cfg)
    except CaseParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (DisconnectedNetwork, ValueError) as exc:
        print(f"error: model construction failed: {exc}", file=sys.stderr)
        return EXIT_MODEL
    ok = err <= tol
    msg = {"case": cfg.case, "N": cfg.N, "max_relative_error": err, "tolerance": tol, "pass": ok, "worst": where}
    if cfg.format == "json":
        print(json.dumps(msg, indent=2, default=str), file=out)
    else:
        print(f"max relative error {err:.3e} (tolerance {tol:.0e}): {'PASS' if ok else 'FAIL'}", file=out)
        if not ok:
            print(f"worst entry: {where}", file=out)
    return EXIT_OK if ok else EXIT_DERIVATIVE


def cmd_dims(case_path, N: int, fmt: str = "text", out=None) -> int:
    out = out or sys.stdout
    try:
        case = load_case(resolve_case(case_path))
    except CaseParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    rows = [opf_dims(case, n) for n in (N if isinstance(N, (list, tuple)) else [N])]
    print(_format_rows(rows, DIMS_COLUMNS, fmt), file=out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--case")
    common.add_argument("--scenarios", type=int, metavar="N")
    common.add_argument("--sigma", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--contingencies", type=lambda s: [int(t) for t in s.split(",") if t], metavar="B1,B2")
    common.add_argument("--strategy", choices=[s.value for s in Strategy])
    common.add_argument("--groups", type=int, metavar="G")
    common.add_argument("--workers", type=int, metavar="W")
    common.add_argument("--batch", type=int, metavar="n_batch")
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--format", choices=["text", "csv", "json"])
    common.add_argument("--deterministic", choices=["on", "off"])
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="blockipm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one block-OPF instance")
    sub.add_parser("bench", parents=[common], help="run a configuration matrix and report timings")
    sub.add_parser("check-derivatives", parents=[common], help="compare AD derivatives with finite differences")
    sub.add_parser("dims", parents=[common], help="print problem dimensions")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = load_config_file(args.config) if args.config else None
        if args.command == "dims":
            n = args.scenarios if args.scenarios is not None else (file_values or {}).get("N", 1)
            if n < 1:
                raise ConfigError("the number of scenarios must be at least 1")
            fmt = args.format or (file_values or {}).get("format", "text")
            return cmd_dims(args.case or (file_values or {}).get("case", "case9"), n, fmt)
        cfg = build_config(args, file_values)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.command == "solve":
        return cmd_solve(cfg)
    if args.command == "check-derivatives":
        return cmd_check_derivatives(cfg)
    try:
        configs = [c.validate() for c in bench_configs(cfg, file_values)]
    except (ConfigError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    return cmd_bench(configs, cfg.format if args.format or (file_values or {}).get("format") else "csv",
                     deterministic=cfg.deterministic)


if __name__ == "__main__":
    sys.exit(main())
