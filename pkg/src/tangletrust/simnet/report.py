"""Scenario report: JSON document plus three CSV tables, all byte-stable for a given seed."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

CSV_NAMES = ("tps.csv", "fscore.csv", "attacks.csv")
CSV_COLUMNS = {
    "tps.csv": ("class", "tps"),
    "fscore.csv": ("aggregator", "fscore", "tp", "fp", "fn", "tn"),
    "attacks.csv": ("kind", "attempts", "successes"),
}
LABEL_COLUMNS = frozenset({"class", "aggregator", "kind", "mode", "winner"})


@dataclass
class MetricsReport:
    seed: int
    config_digest: str
    elapsed_ticks: int
    tps: Dict[str, float]
    fscore: Dict[str, Optional[float]]
    confusion: Dict[str, List[int]]
    attack_outcomes: Dict[str, Dict[str, int]]
    balances: Dict[str, int]
    reputations: Dict[str, Dict[str, float]]
    flags: List[str] = field(default_factory=list)
    rejections: Dict[str, int] = field(default_factory=dict)
    audits: Dict[str, object] = field(default_factory=dict)
    extras: Dict[str, object] = field(default_factory=dict)
    calibration: str = ""
    snapshot_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def header(self) -> str:
        return f"# seed={self.seed}, config={self.config_digest}\n"

    def csv_tables(self) -> Dict[str, str]:
        rows = {
            "tps.csv": [(k, repr(v)) for k, v in sorted(self.tps.items())],
            "fscore.csv": [
                (agg, "" if self.fscore[agg] is None else repr(self.fscore[agg]), *self.confusion[agg])
                for agg in sorted(self.fscore)
            ],
            "attacks.csv": [
                (kind, o["attempts"], o["successes"]) for kind, o in sorted(self.attack_outcomes.items())
            ],
        }
        out = {}
        for name in CSV_NAMES:
            buf = io.StringIO()
            buf.write(self.header())
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(CSV_COLUMNS[name])
            w.writerows(rows[name])
            out[name] = buf.getvalue()
        return out

    def write(self, out_dir) -> List[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        files = {"report.json": self.to_json(), **self.csv_tables()}
        for name, text in files.items():
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            written.append(path)
        return written


class CsvFormatError(ValueError):
    pass


def parse_csv(text: str) -> dict:
    """Parse one emitted table back into ``{"table", "header", "columns", "rows"}``.

    Tables written by a scenario are recognised by their columns; anything else
    (bench rows, experiment sweeps) comes back as ``"custom"``.
    """
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise CsvFormatError("missing provenance header")
    meta = {}
    for part in lines[0][1:].split(","):
        if "=" not in part:
            raise CsvFormatError(f"bad header field {part!r}")
        k, v = part.strip().split("=", 1)
        meta[k] = v
    reader = csv.reader(lines[1:])
    try:
        columns = tuple(next(reader))
    except StopIteration as exc:
        raise CsvFormatError("missing column row") from exc
    if not columns or any(not c for c in columns):
        raise CsvFormatError("empty column name")
    known = {cols: name for name, cols in CSV_COLUMNS.items()}
    rows = []
    for raw in reader:
        if len(raw) != len(columns):
            raise CsvFormatError(f"row has {len(raw)} cells, expected {len(columns)}")
        rows.append(dict(zip(columns, (_cell(c, v) for c, v in zip(columns, raw)))))
    return {"table": known.get(columns, "custom"), "header": meta, "columns": columns, "rows": rows}


def _cell(column: str, value: str):
    if column in LABEL_COLUMNS:
        return value
    if value == "":
        return None
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError as exc:
        raise CsvFormatError(f"column {column}: not a number: {value!r}") from exc


def render_csv(parsed: dict) -> str:
    """Inverse of :func:`parse_csv`."""
    buf = io.StringIO()
    buf.write("# " + ", ".join(f"{k}={v}" for k, v in parsed["header"].items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(parsed["columns"])
    for row in parsed["rows"]:
        w.writerow([format_cell(row[c]) for c in parsed["columns"]])
    return buf.getvalue()


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def render_table(meta: Dict[str, object], columns, rows) -> str:
    """Emit a headed CSV table in the same dialect :func:`parse_csv` reads."""
    return render_csv({"header": meta, "columns": tuple(columns),
                       "rows": [dict(zip(columns, r)) for r in rows]})
