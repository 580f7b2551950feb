"""Tables, assertions and the files an experiment leaves behind."""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__


@dataclass
class Table:
    columns: tuple
    rows: list = field(default_factory=list)
    note: str = ""

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"row of {len(values)} values for columns {self.columns}")
        self.rows.append(tuple(values))

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])


@dataclass
class Check:
    passed: bool
    value: object = None
    threshold: object = None
    note: str = ""


@dataclass
class ExperimentResult:
    kind: str
    tables: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    derived: dict = field(default_factory=dict)
    reported: dict = field(default_factory=dict)

    def check(self, name, passed, value=None, threshold=None, note=""):
        self.checks[name] = Check(bool(passed), jsonable(value), jsonable(threshold), note)
        return self.checks[name]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, table: Table, meta: dict):
    with open(Path(path), "w", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"# {key}: {value}\n")
        if table.note:
            for line in table.note.splitlines():
                fh.write(f"# {line}\n")
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(table.columns)
        for row in table.rows:
            out.writerow([_fmt(v) for v in row])


def jsonable(obj):
    """Recursively convert numpy and complex values to JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def versions() -> dict:
    return {"moyalkin": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def manifest(config, result: ExperimentResult, files: dict) -> dict:
    return jsonable({
        "kind": result.kind,
        "seed": config.seed,
        "config": {k: v for k, v in config.to_dict().items() if k != "out"},
        "versions": versions(),
        "derived": result.derived,
        "reported": result.reported,
        "assertions": {name: {"passed": c.passed, "value": c.value, "threshold": c.threshold,
                              **({"note": c.note} if c.note else {})}
                       for name, c in result.checks.items()},
        "passed": result.passed,
        "tables": files,
    })


def write_outputs(config, result: ExperimentResult, out_dir) -> dict:
    """Write every table as CSV plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"kind": result.kind, "seed": config.seed, "moyalkin": __version__}
    files = {}
    for name, table in result.tables.items():
        fname = f"{name}.csv"
        write_table(out / fname, table, {**meta, "table": name})
        files[name] = fname
    man = manifest(config, result, files)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man
