"""Flat pass/fail records for the verification batteries.

Reports are line-oriented key=value text so two runs with identical inputs
diff cleanly: one ``check=...`` record per verification, fixed field order,
fixed float formatting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["CheckRecord", "Report", "fmt_float", "fmt_point"]


def fmt_float(x: float) -> str:
    if x is None:
        return "-"
    if np.isinf(x):
        return "inf"
    return f"{float(x):.3e}"


def fmt_point(p) -> str:
    if p is None:
        return "-"
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    return ",".join(f"{v:.9g}" for v in arr)


@dataclass
class CheckRecord:
    name: str
    passed: bool
    deviation: float | None = None
    tol: float | None = None
    witness: str = "-"

    def line(self) -> str:
        return (
            f"check={self.name} "
            f"verdict={'pass' if self.passed else 'fail'} "
            f"deviation={fmt_float(self.deviation)} "
            f"tol={fmt_float(self.tol)} "
            f"witness={self.witness}"
        )


@dataclass
class Report:
    """Ordered collection of check records with echoed context."""

    title: str
    context: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def add(self, name, passed, deviation=None, tol=None, witness="-") -> CheckRecord:
        rec = CheckRecord(name, bool(passed), deviation, tol, str(witness))
        self.checks.append(rec)
        return rec

    def extend(self, other: "Report", prefix: str = "") -> None:
        for rec in other.checks:
            self.checks.append(
                CheckRecord(
                    prefix + rec.name, rec.passed, rec.deviation, rec.tol, rec.witness
                )
            )

    @property
    def passed(self) -> bool:
        return all(rec.passed for rec in self.checks)

    def max_deviation(self) -> float:
        devs = [rec.deviation for rec in self.checks if rec.deviation is not None]
        return max(devs) if devs else 0.0

    def lines(self) -> list:
        out = [f"report={self.title}"]
        for key in sorted(self.context):
            out.append(f"{key}={self.context[key]}")
        out.extend(rec.line() for rec in self.checks)
        out.append(f"verdict={'pass' if self.passed else 'fail'}")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.text())
