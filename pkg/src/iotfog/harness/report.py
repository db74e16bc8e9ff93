"""Table rendering (CSV/JSON) and the qualitative shape check."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from iotfog.harness.scenario import Cell, ScenarioReport, SizeReport

ROWS = ("Searching", "Examine", "Selecting")
ABSENT = "-"
SELECT_TOLERANCE = 0.25


def fmt_seconds(value: float | None) -> str:
    """Two decimals, half-up, from the shortest repr so 0.125 -> 0.13."""
    if value is None:
        return ABSENT
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _column(cell: Cell) -> str:
    return f"node{cell.target}_{cell.power}"


def _row_value(cell: Cell, row: str) -> float | None:
    return {"Searching": cell.searching_s, "Examine": cell.examine_s, "Selecting": cell.selecting_s}[row]


def table(size: SizeReport) -> list[list[str]]:
    """Header row then one row per operation, columns ordered target then power."""
    header = ["metric"] + [_column(c) for c in size.cells]
    body = [[row] + [fmt_seconds(_row_value(c, row)) for c in size.cells] for row in ROWS]
    return [header] + body


def render_csv(size: SizeReport) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(table(size))
    return buf.getvalue()


def render_json(report: ScenarioReport) -> str:
    doc = {
        "seed": report.seed,
        "sizes": [
            {**{k: v for k, v in asdict(s).items() if k != "cells"},
             "cells": [asdict(c) for c in s.cells],
             "table": table(s)}
            for s in report.sizes
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def emit_report(report: ScenarioReport, out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    """Write ``size_<n>.csv`` per size, or a single ``report.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / "report.json"
        path.write_text(render_json(report))
        return [path]
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    paths = []
    for size in report.sizes:
        path = out / f"size_{size.size}.csv"
        path.write_text(render_csv(size))
        paths.append(path)
    return paths


def _from_dict(doc: dict) -> ScenarioReport:
    sizes = []
    for s in doc["sizes"]:
        fields = {k: v for k, v in s.items() if k not in ("cells", "table")}
        cells = tuple(Cell(**c) for c in s["cells"])
        sizes.append(SizeReport(cells=cells, **fields))
    return ScenarioReport(seed=doc["seed"], sizes=tuple(sizes))


def load_report(path: str | Path) -> ScenarioReport | dict[int, list[Cell]]:
    """Load a JSON report, or a directory / single file of per-size CSVs.

    CSVs only carry the table, so they load as ``{size: cells}``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no report at {path}")
    if path.is_file() and path.suffix == ".json":
        return _from_dict(json.loads(path.read_text()))
    files = sorted(path.glob("size_*.csv")) if path.is_dir() else [path]
    if not files:
        raise ValueError(f"no report found at {path}")
    return {int(f.stem.split("_", 1)[1]): _cells_from_csv(f.read_text()) for f in files}


def _cells_from_csv(text: str) -> list[Cell]:
    rows = list(csv.reader(io.StringIO(text)))
    header, values = rows[0], {r[0]: r[1:] for r in rows[1:]}
    if header[0] != "metric" or set(values) != set(ROWS):
        raise ValueError("not a scenario table")

    def num(s: str) -> float | None:
        return None if s == ABSENT else float(s)

    cells = []
    for i, col in enumerate(header[1:]):
        target, power = col.removeprefix("node").split("_")
        cells.append(Cell(int(target), "", power, num(values["Searching"][i]),
                          num(values["Examine"][i]), num(values["Selecting"][i])))
    return cells


@dataclass(frozen=True)
class Violation:
    rule: str
    size: int | None
    target: int | None
    detail: str

    def __str__(self) -> str:
        where = "" if self.size is None else f" n={self.size}" + ("" if self.target is None else f" node{self.target}")
        return f"({self.rule}){where}: {self.detail}"


def check_shape(report: ScenarioReport | dict[int, list[Cell]]) -> list[Violation]:
    """Return every violation of rules (a) to (d); empty means the shape holds.

    (a) Searching Off > On per target. (b) Examine present iff On.
    (c) |Selecting On - Off| <= 25% of On. (d) mean Searching strictly
    increases with network size.
    """
    by_size = report if isinstance(report, dict) else {s.size: list(s.cells) for s in report.sizes}
    problems: list[Violation] = []
    means: list[tuple[int, float]] = []
    for size in sorted(by_size):
        cells = by_size[size]
        for cell in cells:
            present = cell.examine_s is not None
            if present != (cell.power == "on"):
                problems.append(Violation("b", size, cell.target,
                                          f"examine {'present' if present else 'absent'} with target {cell.power}"))
        on = {c.target: c for c in cells if c.power == "on"}
        off = {c.target: c for c in cells if c.power == "off"}
        for target in sorted(on.keys() & off.keys()):
            a, b = on[target], off[target]
            if not b.searching_s > a.searching_s:
                problems.append(Violation("a", size, target, f"searching off {b.searching_s} <= on {a.searching_s}"))
            if abs(a.selecting_s - b.selecting_s) > SELECT_TOLERANCE * a.selecting_s:
                problems.append(Violation("c", size, target, f"selecting on {a.selecting_s} vs off {b.selecting_s}"))
        for target in sorted(on.keys() ^ off.keys()):
            problems.append(Violation("a", size, target, "missing on/off pair"))
        means.append((size, sum(c.searching_s for c in cells) / len(cells)))
    for (n1, m1), (n2, m2) in zip(means, means[1:]):
        if not m2 > m1:
            problems.append(Violation("d", None, None, f"mean searching n={n1}: {m1:.6f} >= n={n2}: {m2:.6f}"))
    return problems
