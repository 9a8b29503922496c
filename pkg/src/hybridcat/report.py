"""Report object shared by every numerical check in the package.

Checks never raise on a failed property; they return one of these, with
enough seed/sample metadata to reproduce the verdict exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


def _plain(value):
    """Coerce numpy scalars/arrays into JSON-friendly Python values."""
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, float):
        return value
    return value


@dataclass
class CheckReport:
    """Outcome of one sampled check.

    ok is the overall verdict; violations hold witnesses; starvations are
    sets where sampling found no points (distinct from failure); notes carry
    assumptions the check did not verify.
    """

    name: str
    ok: bool = True
    violations: list = field(default_factory=list)
    starvations: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    max_residual: Optional[float] = None

    def fail(self, kind: str, **data):
        self.ok = False
        self.violations.append({"kind": kind, **{k: _plain(v) for k, v in data.items()}})

    def starve(self, what: str, **data):
        self.starvations.append({"set": what, **{k: _plain(v) for k, v in data.items()}})

    def note(self, text: str):
        self.notes.append(text)

    def bump_residual(self, r: float):
        if self.max_residual is None or r > self.max_residual:
            self.max_residual = float(r)

    def merge(self, other: "CheckReport"):
        self.ok = self.ok and other.ok
        self.violations.extend(other.violations)
        self.starvations.extend(other.starvations)
        self.notes.extend(other.notes)
        if other.max_residual is not None:
            self.bump_residual(other.max_residual)
        for k, v in other.stats.items():
            self.stats[f"{other.name}.{k}" if k in self.stats else k] = _plain(v)

    def to_obj(self) -> dict:
        out = {
            "check": self.name,
            "ok": self.ok,
            "violations": self.violations,
            "starvations": self.starvations,
            "notes": self.notes,
            "stats": _plain(self.stats),
        }
        if self.max_residual is not None:
            out["max_residual"] = self.max_residual
        return out
