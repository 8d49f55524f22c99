"""Run reports: deterministic numerical JSON, separate timing JSON, text pass/fail table."""
from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__

SCHEMA_VERSION = "mnsl-report/1"


def artifact_version() -> str:
    """``v<version>`` plus ``-g<commit>`` when the source tree is a git checkout."""
    base = f"v{__version__}"
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short=12", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return base
    sha = out.stdout.strip()
    return f"{base}-g{sha}" if out.returncode == 0 and sha else base


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


@dataclass
class Check:
    name: str
    passed: bool
    value: Optional[float] = None
    tol: Optional[float] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": self.value, "tol": self.tol,
                "detail": self.detail}


@dataclass
class RunReport:
    command: str
    config: dict
    checks: list = field(default_factory=list)
    conditions: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    error: Optional[str] = None
    version: str = field(default_factory=artifact_version)

    def check(self, name: str, passed: bool, value=None, tol=None, detail: str = "") -> Check:
        c = Check(name, bool(passed), None if value is None else float(value), None if tol is None else float(tol),
                  detail)
        self.checks.append(c)
        return c

    def add_condition(self, report, expected: str = "Holds") -> None:
        """Record a ConditionReport and a check that its verdict is the expected one."""
        d = report.to_dict()
        d["expected"] = expected
        self.conditions.append(d)
        name = f"{d['family']}:{d['condition']}"
        if d["condition"] == "LieLaplacian" and d["note"]:
            name += f"[{d['note']}]"
        self.check(name, d["verdict"] == expected, d["max_residual"], d["tol"], f"{d['verdict']} (expected {expected})")

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    @property
    def status(self) -> str:
        if self.error is not None:
            return "error"
        return "pass" if self.passed else "fail"

    def numerical_dict(self) -> dict:
        """Everything except wall-clock data, in a fixed key order."""
        return _clean({
            "schema": SCHEMA_VERSION,
            "version": self.version,
            "command": self.command,
            "status": self.status,
            "error": self.error,
            "config": self.config,
            "checks": [c.to_dict() for c in self.checks],
            "conditions": self.conditions,
            "results": self.results,
            "tables": dict(sorted(self.tables.items())),
        })

    def to_json(self) -> str:
        return json.dumps(self.numerical_dict(), indent=2) + "\n"

    def timing_json(self) -> str:
        return json.dumps(_clean({"schema": SCHEMA_VERSION, "command": self.command, "timings": self.timings}),
                          indent=2) + "\n"

    def to_text(self) -> str:
        lines = [f"mnsl {self.command}  [{self.version}]  status: {self.status.upper()}"]
        if self.error:
            lines.append(f"error: {self.error}")
        if self.checks:
            w = max(len(c.name) for c in self.checks)
            for c in self.checks:
                val = "" if c.value is None else f"{c.value:.3e}"
                tol = "" if c.tol is None else f"{c.tol:.1e}"
                lines.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{w}}  {val:>10}  {tol:>8}  {c.detail}")
        else:
            lines.append("(no checks)")
        for name, path in sorted(self.tables.items()):
            lines.append(f"table {name}: {path}")
        return "\n".join(lines) + "\n"


def write_report(report: RunReport, out_dir, formats=("json", "text")) -> dict:
    """Write report.json, timing.json and report.txt; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        if "json" in formats:
            p = out / "report.json"
            p.write_text(report.to_json(), newline="\n")
            paths["json"] = p
            t = out / "timing.json"
            t.write_text(report.timing_json(), newline="\n")
            paths["timing"] = t
        if "text" in formats:
            p = out / "report.txt"
            p.write_text(report.to_text(), newline="\n")
            paths["text"] = p
    except OSError as e:
        raise OSError(f"cannot write report into {out}: {e}") from e
    return paths
