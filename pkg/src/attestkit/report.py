"""Attestation reports.

A report is the appraiser's answer and nothing else: verdict, findings,
and run-invariant supporting context. Anything that varies between two
otherwise-identical evaluations (timestamps, session ids, blob digests)
belongs in the transport envelope, not here — the same target in the
same state must yield byte-identical reports whatever the topology.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from . import canonical


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    ERROR = "error"


class Severity(str, enum.Enum):
    INFO = "info"
    WARNING = "warning"
    FAIL = "fail"

    @property
    def rank(self) -> int:
        return _SEVERITY_ORDER[self]

    def __lt__(self, other):
        if isinstance(other, Severity):
            return self.rank < other.rank
        return NotImplemented


_SEVERITY_ORDER = {Severity.INFO: 0, Severity.WARNING: 1, Severity.FAIL: 2}


@dataclass(frozen=True)
class Finding:
    node_id: Optional[int]  # None for findings about the bundle as a whole
    text: str
    severity: Severity

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "text": self.text,
            "severity": self.severity.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Finding":
        return cls(
            node_id=obj["node_id"],
            text=obj["text"],
            severity=Severity(obj["severity"]),
        )


@dataclass(frozen=True)
class Report:
    verdict: Verdict
    findings: tuple[Finding, ...] = ()
    supporting: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "findings": [f.to_json() for f in self.findings],
            "supporting": self.supporting,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Report":
        return cls(
            verdict=Verdict(obj["verdict"]),
            findings=tuple(Finding.from_json(f) for f in obj.get("findings", [])),
            supporting=obj.get("supporting", {}),
        )

    def serialize(self) -> bytes:
        return canonical.dumps(self.to_json())


def synthesize(findings: list[Finding], supporting: dict) -> Report:
    """Derive the verdict from the findings: any fail-severity finding
    fails the report; otherwise it passes. Findings are ordered by node
    id then text so reports are deterministic."""
    ordered = tuple(
        sorted(findings, key=lambda f: (f.node_id if f.node_id is not None else -1, f.text))
    )
    worst = max((f.severity.rank for f in ordered), default=0)
    verdict = Verdict.FAIL if worst >= Severity.FAIL.rank else Verdict.PASS
    return Report(verdict=verdict, findings=ordered, supporting=supporting)


def error_report(reason: str) -> Report:
    """A report for sessions that never produced appraisable evidence."""
    return Report(
        verdict=Verdict.ERROR,
        findings=(Finding(None, reason, Severity.FAIL),),
        supporting={},
    )
