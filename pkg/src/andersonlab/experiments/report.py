"""Report directories: config echo, raw CSV tables, summary and manifest."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .. import __version__
from .ensemble import SEED_RULE, EnsembleSpec, canonical_json, config_hash

__all__ = ["Table", "ExperimentReport", "ReportError", "write_report", "read_tables",
           "read_json", "format_value", "parse_value"]


class ReportError(RuntimeError):
    """Missing or tampered report files."""


def _py(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return str(x)


def format_value(x) -> str:
    return repr(x) if isinstance(x, float) else str(x)


def parse_value(tok: str):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return tok


@dataclass
class Table:
    """Plain rows with documented columns; values are ints, floats or strings."""

    name: str
    columns: tuple[str, ...]
    doc: dict[str, str]
    rows: list[tuple] = field(default_factory=list)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.rows = [tuple(_py(v) for v in r) for r in self.rows]
        missing = [c for c in self.columns if c not in self.doc]
        if missing:
            raise ValueError(f"undocumented columns {missing} in table {self.name}")

    def append(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"{self.name}: expected {len(self.columns)} values")
        self.rows.append(tuple(_py(v) for v in values))

    def extend(self, rows) -> None:
        for r in rows:
            self.append(*r)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def to_csv(self) -> str:
        lines = [f"# {c}: {self.doc[c]}" for c in self.columns]
        lines.append(",".join(self.columns))
        lines += [",".join(format_value(v) for v in r) for r in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, name: str, text: str) -> "Table":
        doc, columns, rows = {}, None, []
        for line in text.splitlines():
            if line.startswith("# "):
                k, _, v = line[2:].partition(": ")
                doc[k] = v
            elif columns is None:
                columns = tuple(line.split(","))
            elif line:
                rows.append(tuple(parse_value(t) for t in line.split(",")))
        if columns is None:
            raise ReportError(f"table {name} has no header")
        return cls(name, columns, doc, rows)


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


@dataclass
class ExperimentReport:
    spec: EnsembleSpec
    tables: dict[str, Table]
    summary: dict[str, Any]

    @property
    def checks(self) -> dict:
        return self.summary.get("checks", {})

    @property
    def all_checks_pass(self) -> bool:
        return all(c.get("violations", 0) == 0 for c in self.checks.values())

    def manifest(self, checksums: dict[str, str]) -> dict:
        cfg = self.spec.to_dict()
        return {
            "master_seed": self.spec.master_seed,
            "seed_rule": SEED_RULE,
            "realizations": self.spec.realizations,
            "code_version": f"andersonlab {__version__}",
            "config_hash": config_hash(cfg),
            "experiment": self.spec.experiment,
            "data_sha256": checksums,
        }


def write_report(report: ExperimentReport, outdir) -> Path:
    out = Path(outdir)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for name in sorted(report.tables):
        text = report.tables[name].to_csv()
        (data / f"{name}.csv").write_text(text)
        checksums[f"data/{name}.csv"] = hashlib.sha256(text.encode()).hexdigest()
    manifest = report.manifest(checksums)
    (out / "config.json").write_text(_dump(json.loads(canonical_json(report.spec.to_dict()))))
    summary = dict(report.summary)
    summary["manifest"] = manifest
    (out / "summary.json").write_text(_dump(summary))
    (out / "MANIFEST.json").write_text(_dump(manifest))
    return out


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ReportError(f"missing {path}")
    return json.loads(path.read_text())


def read_tables(outdir) -> tuple[dict, dict[str, Table]]:
    """Load and checksum-verify the data tables of a report directory."""
    out = Path(outdir)
    manifest = read_json(out / "MANIFEST.json")
    listed = manifest.get("data_sha256", {})
    if not listed:
        raise ReportError("manifest lists no data files")
    tables = {}
    for rel, digest in sorted(listed.items()):
        path = out / rel
        if not path.exists():
            raise ReportError(f"missing data file {rel}")
        text = path.read_text()
        if hashlib.sha256(text.encode()).hexdigest() != digest:
            raise ReportError(f"checksum mismatch for {rel}")
        name = Path(rel).stem
        tables[name] = Table.from_csv(name, text)
    return manifest, tables
