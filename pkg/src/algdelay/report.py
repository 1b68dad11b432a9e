"""Verification results and their JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _plain(x: Any) -> Any:
    """Convert numpy scalars/arrays (possibly nested) into JSON-able values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


@dataclass
class CheckResult:
    """Outcome of one named check.

    ``worst`` is the worst observed value of the checked quantity; whether
    small or large is good is recorded by ``sense`` (``"max"``: must stay at
    or below ``tolerance``; ``"min"``: must stay at or above it).
    """

    name: str
    passed: bool
    worst: float
    samples: int
    tolerance: float | None = None
    sense: str = "max"
    where: Any = None
    detail: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, name, values, tolerance, *, sense="max", where=None, detail=None):
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return cls(name, False, float("nan"), 0, tolerance, sense, None, detail or {"error": "no samples"})
        idx = int(np.nanargmax(values) if sense == "max" else np.nanargmin(values))
        worst = float(values[idx])
        ok = bool(np.all(np.isfinite(values)))
        ok &= bool(worst <= tolerance) if sense == "max" else bool(worst >= tolerance)
        loc = where[idx] if where is not None else idx
        return cls(name, ok, worst, int(values.size), tolerance, sense, loc, detail or {})

    def to_dict(self) -> dict:
        return _plain(
            {
                "name": self.name,
                "pass": self.passed,
                "worst": self.worst,
                "samples": self.samples,
                "tolerance": self.tolerance,
                "sense": self.sense,
                "worst_location": self.where,
                "detail": self.detail,
            }
        )

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        cmp = "<=" if self.sense == "max" else ">="
        return f"[{mark}] {self.name}: worst={self.worst:.3e} {cmp} {self.tolerance:.1e} over {self.samples} samples"


@dataclass
class VerificationReport:
    checks: list[CheckResult] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        return check

    def to_dict(self) -> dict:
        return _plain({"pass": self.passed, "checks": [c.to_dict() for c in self.checks], "provenance": self.provenance})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
