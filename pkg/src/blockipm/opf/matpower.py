"""Reader for MATPOWER ``.m`` case files (version 2 format)."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class CaseParseError(ValueError):
    pass


class MissingTable(CaseParseError):
    def __init__(self, name: str):
        super().__init__(f"missing table mpc.{name}")
        self.table = name


class MalformedRow(CaseParseError):
    def __init__(self, line: int, detail: str):
        super().__init__(f"malformed row at line {line}: {detail}")
        self.line = line


class NoReferenceBus(CaseParseError):
    def __init__(self, count: int):
        super().__init__(f"expected exactly one reference bus, found {count}")
        self.count = count


# minimum column counts
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}

BUS_PQ, BUS_PV, BUS_REF, BUS_ISOLATED = 1, 2, 3, 4


@dataclass(frozen=True)
class CaseData:
    """Raw MATPOWER tables in their file units (MW, MVAr, degrees).

    Column layout follows MATPOWER: ``bus`` = (id, type, Pd, Qd, Gs, Bs, area,
    Vm, Va, baseKV, zone, Vmax, Vmin); ``gen`` = (bus, Pg, Qg, Qmax, Qmin, Vg,
    mBase, status, Pmax, Pmin); ``branch`` = (from, to, r, x, b, rateA,
    rateB, rateC, ratio, angle, status); ``gencost`` = (model, startup,
    shutdown, n, c_{n-1} ... c_0).
    """

    name: str
    baseMVA: float
    bus: np.ndarray
    gen: np.ndarray
    branch: np.ndarray
    gencost: np.ndarray | None

    @property
    def n_bus(self) -> int:
        return self.bus.shape[0]

    @property
    def n_branch(self) -> int:
        return self.branch.shape[0]

    @property
    def n_gen(self) -> int:
        return self.gen.shape[0]

    def bus_index(self) -> dict:
        return {int(b): k for k, b in enumerate(self.bus[:, 0])}

    def ref_bus(self) -> int:
        return int(np.flatnonzero(self.bus[:, 1] == BUS_REF)[0])

    def in_service(self) -> "CaseData":
        """Copy without out-of-service generators and branches."""
        gen_on = self.gen[:, 7] > 0
        gencost = None if self.gencost is None else self.gencost[: len(self.gen)][gen_on]
        return CaseData(self.name, self.baseMVA, self.bus, self.gen[gen_on], self.branch[self.branch[:, 10] > 0], gencost)


_COMMENT = re.compile(r"%.*")


def _strip(line: str) -> str:
    return _COMMENT.sub("", line)


def _parse_table(lines: list, start: int, name: str):
    """Parse ``mpc.name = [ ... ];`` beginning at line index ``start``; returns (rows, next index)."""
    rows = []
    first = _strip(lines[start])
    body = first.split("[", 1)[1]
    k = start
    while True:
        done = "]" in body
        if done:
            body = body.split("]", 1)[0]
        for part in body.split(";"):
            tokens = part.replace(",", " ").split()
            if not tokens:
                continue
            try:
                rows.append(([float(t) for t in tokens], k + 1))
            except ValueError:
                raise MalformedRow(k + 1, f"non-numeric entry in mpc.{name}") from None
        if done:
            return rows, k + 1
        k += 1
        if k >= len(lines):
            raise MalformedRow(start + 1, f"unterminated mpc.{name}")
        body = _strip(lines[k])


def parse_matpower(text: str, name: str = "case") -> CaseData:
    """Parse MATPOWER case text; unknown trailing columns are kept but never read."""
    lines = text.splitlines()
    tables = {}
    base = None
    k = 0
    header = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
    while k < len(lines):
        m = header.match(_strip(lines[k]))
        if not m:
            k += 1
            continue
        key, rest = m.group(1), m.group(2).strip()
        if key == "baseMVA":
            try:
                base = float(rest.rstrip(";").strip())
            except ValueError:
                raise MalformedRow(k + 1, "baseMVA is not a number") from None
            k += 1
        elif rest.startswith("["):
            rows, k = _parse_table(lines, k, key)
            tables[key] = rows
        else:
            k += 1
    if base is None:
        raise MissingTable("baseMVA")
    if base <= 0:
        raise MalformedRow(0, "baseMVA must be positive")
    arrays = {}
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in tables:
            if key == "gencost":
                arrays[key] = None
                continue
            raise MissingTable(key)
        rows = tables[key]
        need = _MIN_COLS[key]
        width = max(len(r) for r, _ in rows) if rows else need
        out = np.zeros((len(rows), width))
        for j, (r, line) in enumerate(rows):
            if len(r) < need:
                raise MalformedRow(line, f"mpc.{key} row has {len(r)} columns, expected at least {need}")
            if key != "gencost" and len(r) != width:
                raise MalformedRow(line, f"mpc.{key} row has {len(r)} columns, expected {width}")
            out[j, :len(r)] = r
        arrays[key] = out
    bus = arrays["bus"]
    nref = int(np.sum(bus[:, 1] == BUS_REF))
    if nref != 1:
        raise NoReferenceBus(nref)
    ids = set(bus[:, 0].astype(int).tolist())
    for row, (_, line) in zip(arrays["branch"], tables["branch"]):
        if int(row[0]) not in ids or int(row[1]) not in ids:
            raise MalformedRow(line, "branch endpoint is not a bus")
    for row, (_, line) in zip(arrays["gen"], tables["gen"]):
        if int(row[0]) not in ids:
            raise MalformedRow(line, "generator bus does not exist")
    gencost = arrays["gencost"]
    if gencost is not None:
        for row, (_, line) in zip(gencost, tables["gencost"]):
            if int(row[0]) != 2:
                raise MalformedRow(line, "only polynomial cost curves are supported")
            if int(row[3]) > 3:
                raise MalformedRow(line, "cost polynomials above degree 2 are not supported")
    return CaseData(name, base, bus, arrays["gen"], arrays["branch"], gencost)


def load_case(path) -> CaseData:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseParseError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_matpower(text, name=path.stem)


def data_dir() -> Path:
    """Directory holding the bundled case files (repository ``data/``)."""
    here = Path(__file__).resolve()
    for parent in here.parents:
        cand = parent / "data"
        if (cand / "case9.m").exists():
            return cand
    raise FileNotFoundError("bundled case directory not found")


def resolve_case(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    try:
        cand = data_dir() / (p.name if p.suffix == ".m" else p.name + ".m")
    except FileNotFoundError:
        return p
    return cand if cand.exists() else p
