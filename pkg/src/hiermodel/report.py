"""Labelled numeric tables rendered as aligned text or JSON."""
from __future__ import annotations

import json
import math
import os
from decimal import ROUND_HALF_UP, Decimal
from dataclasses import dataclass, field
from typing import Any, Sequence

PRECISION_ENV = "HIERMODEL_PRECISION"


@dataclass
class Table:
    """``precision`` gives decimals per column for text output (None = as is)."""

    title: str
    columns: list[str]
    rows: list[list[Any]]
    precision: list[int | None] | None = None

    def to_dict(self) -> dict:
        return {"title": self.title, "columns": list(self.columns), "rows": [[_jsonable(c) for c in r] for r in self.rows]}


@dataclass
class Report:
    tables: list[Table] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    format: str = "text"

    def add(self, title, columns, rows, precision=None) -> Table:
        t = Table(title, list(columns), [list(r) for r in rows], precision)
        self.tables.append(t)
        return t

    def to_dict(self) -> dict:
        return {"tables": [t.to_dict() for t in self.tables], "notes": list(self.notes)}


def _jsonable(v):
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _env_precision() -> int | None:
    raw = os.environ.get(PRECISION_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return max(0, int(raw))
    except ValueError:
        return None


def _fmt(v, prec):
    if v is None:
        return ""
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, bool) or isinstance(v, str):
        return str(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
        if prec is None:
            return f"{v:.6g}"
        if abs(v) >= 1e7:
            return f"{v:.5e}"
        # half-up on the shortest repr, so 658.125 -> 658.13
        q = Decimal(repr(v)).quantize(Decimal(1).scaleb(-prec), rounding=ROUND_HALF_UP)
        return f"{q:f}"
    return str(v)


def render_text(report: Report) -> str:
    override = _env_precision()
    out = []
    for t in report.tables:
        prec = t.precision or [None] * len(t.columns)
        if override is not None:
            prec = [override] * len(t.columns)
        cells = [[_fmt(v, prec[i] if i < len(prec) else None) for i, v in enumerate(r)] for r in t.rows]
        widths = [len(c) for c in t.columns]
        for r in cells:
            for i, c in enumerate(r):
                widths[i] = max(widths[i], len(c))
        out.append(t.title)
        out.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(t.columns, widths))))
        out.append("  ".join("-" * w for w in widths))
        for r in cells:
            out.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        out.append("")
    for n in report.notes:
        out.append(f"note: {n}")
    return "\n".join(out).rstrip("\n") + "\n" if out else ""


def render_json(report: Report) -> str:
    return json.dumps(report.to_dict(), separators=(",", ":"))


def render(report: Report, fmt: str = "text") -> bytes:
    if fmt == "json":
        return (render_json(report)).encode("utf-8")
    if fmt == "text":
        return render_text(report).encode("utf-8")
    raise ValueError(f"unknown format {fmt!r}")


def matrix_rows(names: Sequence[str], m) -> list[list]:
    return [[n] + [float(x) for x in row] for n, row in zip(names, m)]
