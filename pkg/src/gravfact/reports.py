"""Verification report rows and their JSON form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field


@dataclass
class Row:
    id: str
    description: str
    anchor: str
    residual: float
    tolerance: float
    scale: float = 1.0

    @property
    def passed(self) -> bool:
        r = self.residual
        return bool(math.isfinite(r) and r <= self.tolerance * self.scale)

    def to_dict(self) -> dict:
        return {"id": self.id, "description": self.description, "paperAnchor": self.anchor,
                "residual": _num(self.residual), "tolerance": _num(self.tolerance),
                "scale": _num(self.scale), "pass": self.passed}


def _num(x: float):
    x = float(x)
    if math.isfinite(x):
        return float(f"{x:.12e}")
    return str(x)


@dataclass
class Report:
    suite: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row: Row) -> Row:
        self.rows.append(row)
        return row

    def extend(self, rows) -> None:
        self.rows.extend(rows)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failing(self) -> list:
        return [r for r in self.sorted_rows() if not r.passed]

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: r.id)

    def apply_overrides(self, tolerances: dict, tol_scale: float = 1.0) -> None:
        for r in self.rows:
            if r.id in tolerances:
                r.tolerance = float(tolerances[r.id])
            r.tolerance *= tol_scale

    def to_dict(self) -> dict:
        return {"suite": self.suite, "pass": self.passed,
                "rows": [r.to_dict() for r in self.sorted_rows()],
                "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        bad = self.failing()
        return f"{self.suite}: {len(self.rows) - len(bad)}/{len(self.rows)} rows pass"


def max_row(id: str, description: str, anchor: str, residuals, tolerance: float, scale: float = 1.0) -> Row:
    """One row holding the worst of several trial residuals."""
    vals = [float(r) for r in residuals]
    worst = max(vals) if vals else 0.0
    if any(not math.isfinite(v) for v in vals):
        worst = float("nan")
    return Row(id, description, anchor, worst, tolerance, scale)
