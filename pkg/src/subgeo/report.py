"""Analysis reports: JSON and text renderings carrying identical numbers."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import config_hash


def _plain(v):
    """Convert numpy scalars/arrays to JSON-friendly Python values."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def _num(v):
    # the text rendering uses repr so that numbers round-trip exactly
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _json_default(v):
    return _plain(v)


@dataclass
class Check:
    name: str
    passed: bool
    verdict: str
    values: dict = field(default_factory=dict)
    error: dict | None = None

    def as_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "verdict": self.verdict,
                "values": _plain(self.values), "error": _plain(self.error)}


@dataclass
class AnalysisReport:
    command: str
    config: dict
    checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    backend: str = "python"

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def provenance(self):
        from . import __version__
        return {"config_hash": config_hash(self.config), "seed": self.config["numeric"]["seed"],
                "version": __version__, "backend": self.backend,
                "schema_version": self.config["schema_version"]}

    def as_dict(self):
        return {
            "command": self.command,
            "passed": self.passed,
            "checks": [c.as_dict() for c in self.checks],
            "warnings": list(self.warnings),
            "artifacts": list(self.artifacts),
            "provenance": self.provenance(),
            "config": _plain(self.config),
        }

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, default=_json_default,
                          allow_nan=True)

    def to_text(self):
        return render_text(self.as_dict())

    def write(self, out_dir, stem=None):
        os.makedirs(out_dir, exist_ok=True)
        stem = stem or self.command
        fmts = self.config["output"]["formats"]
        paths = []
        if "json" in fmts:
            p = os.path.join(out_dir, f"{stem}.json")
            with open(p, "w") as fh:
                fh.write(self.to_json())
            paths.append(p)
        if "text" in fmts:
            p = os.path.join(out_dir, f"{stem}.txt")
            with open(p, "w") as fh:
                fh.write(self.to_text())
            paths.append(p)
        return paths


def _flatten(prefix, v, out):
    if isinstance(v, dict):
        for k in sorted(v):
            _flatten(f"{prefix}.{k}" if prefix else str(k), v[k], out)
    elif isinstance(v, list) and v and all(isinstance(x, (int, float)) for x in v):
        out.append((prefix, "[" + ", ".join(_num(x) for x in v) + "]"))
    else:
        out.append((prefix, _num(v) if not isinstance(v, (list, dict)) else json.dumps(v)))


def render_text(d: dict) -> str:
    """Human-readable rendering of a report dictionary."""
    lines = [f"command: {d['command']}", f"overall: {'PASS' if d['passed'] else 'FAIL'}"]
    for c in d["checks"]:
        lines.append("")
        lines.append(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c['verdict']}")
        rows = []
        _flatten("", c["values"], rows)
        for k, v in rows:
            lines.append(f"    {k} = {v}")
        if c.get("error"):
            rows = []
            _flatten("error", c["error"], rows)
            for k, v in rows:
                lines.append(f"    {k} = {v}")
    if d["warnings"]:
        lines.append("")
        lines.append("warnings:")
        lines.extend(f"    {w}" for w in d["warnings"])
    if d["artifacts"]:
        lines.append("")
        lines.append("artifacts:")
        lines.extend(f"    {a}" for a in d["artifacts"])
    lines.append("")
    lines.append("provenance:")
    for k, v in sorted(d["provenance"].items()):
        lines.append(f"    {k} = {_num(v)}")
    lines.append("")
    lines.append("config (resolved, defaults included):")
    rows = []
    _flatten("", d["config"], rows)
    lines.extend(f"    {k} = {v}" for k, v in rows)
    return "\n".join(lines) + "\n"
