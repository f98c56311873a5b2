"""Persistent record shapes for the host-monitoring service.

Two record kinds live here: the host roster entry and the evaluation
history entry.  Both are plain dataclasses with JSON round-trips; all
timestamps are kept internally as POSIX seconds and serialized as
RFC 3339 UTC strings (the only form the REST surface speaks).
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Optional

TRIGGER_PERIODIC = "periodic"
TRIGGER_ON_DEMAND = "on-demand"
_TRIGGERS = (TRIGGER_PERIODIC, TRIGGER_ON_DEMAND)

STATE_PENDING = "pending"
STATE_COMPLETED = "completed"
STATE_ERROR = "error"
_STATES = (STATE_PENDING, STATE_COMPLETED, STATE_ERROR)

MIN_INTERVAL = 10.0


def to_rfc3339(ts: float) -> str:
    """Format POSIX seconds as an RFC 3339 UTC timestamp (Z suffix)."""
    stamp = datetime.fromtimestamp(ts, tz=timezone.utc)
    return stamp.isoformat(timespec="microseconds").replace("+00:00", "Z")


def from_rfc3339(text: str) -> float:
    """Parse an RFC 3339 timestamp back to POSIX seconds.

    Raises ValueError on anything that is not a timestamp.
    """
    if not isinstance(text, str) or not text:
        raise ValueError("timestamp must be a non-empty string")
    stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def _opt_stamp(ts: Optional[float]) -> Optional[str]:
    return None if ts is None else to_rfc3339(ts)


def _opt_parse(text: Optional[str]) -> Optional[float]:
    return None if text is None else from_rfc3339(text)


@dataclass(frozen=True)
class HostRecord:
    """One monitored host: who it is, how to reach it, what to measure.

    ``am_endpoint`` is either a peer name the monitor's local manager can
    route through its own peers map, or a raw ``tcp:``/``unix:`` endpoint
    dialled directly.  ``interval`` of ``None`` means on-demand-only.
    """

    display_name: str
    am_endpoint: str
    resource: str
    interval: Optional[float] = None
    anchor_key_id: Optional[str] = None
    host_id: str = field(default_factory=lambda: str(uuid.uuid4()))

    def __post_init__(self) -> None:
        if not self.display_name or not self.display_name.strip():
            raise ValueError("display_name must be non-empty")
        if not self.am_endpoint or any(c.isspace() for c in self.am_endpoint):
            raise ValueError("am_endpoint must be a non-empty endpoint or peer name")
        if not self.resource or not self.resource.strip():
            raise ValueError("resource must be non-empty")
        if self.interval is not None:
            try:
                interval = float(self.interval)
            except (TypeError, ValueError):
                raise ValueError("interval must be a number of seconds") from None
            if interval < MIN_INTERVAL:
                raise ValueError(
                    f"periodic interval must be at least {MIN_INTERVAL:.0f} s, got {interval}"
                )
            object.__setattr__(self, "interval", interval)
        try:
            uuid.UUID(self.host_id)
        except (ValueError, AttributeError, TypeError):
            raise ValueError(f"host_id is not a UUID: {self.host_id!r}") from None

    @property
    def periodic(self) -> bool:
        return self.interval is not None

    def to_json(self) -> dict:
        return {
            "host_id": self.host_id,
            "display_name": self.display_name,
            "am_endpoint": self.am_endpoint,
            "resource": self.resource,
            "interval": self.interval,
            "anchor_key_id": self.anchor_key_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HostRecord":
        if not isinstance(obj, dict):
            raise ValueError("host record must be a JSON object")
        known = {"host_id", "display_name", "am_endpoint", "resource",
                 "interval", "anchor_key_id"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown host record fields: {sorted(unknown)}")
        kwargs = {
            "display_name": obj.get("display_name"),
            "am_endpoint": obj.get("am_endpoint"),
            "resource": obj.get("resource"),
            "interval": obj.get("interval"),
            "anchor_key_id": obj.get("anchor_key_id"),
        }
        if "host_id" in obj:
            kwargs["host_id"] = obj["host_id"]
        return cls(**kwargs)


@dataclass(frozen=True)
class EvaluationRecord:
    """One integrity evaluation, from request to completion (or error).

    The report is stored as its wire-form JSON object; ``bundle_ref`` is
    the content-addressed digest of the raw evidence bundle when the
    manager returned one.  A record in ``pending`` state has neither.
    """

    host_id: str
    trigger: str
    state: str
    requested_at: float
    completed_at: Optional[float] = None
    report: Optional[dict] = None
    bundle_ref: Optional[str] = None
    error: Optional[str] = None
    eval_id: str = field(default_factory=lambda: str(uuid.uuid4()))

    def __post_init__(self) -> None:
        if self.trigger not in _TRIGGERS:
            raise ValueError(f"trigger must be one of {_TRIGGERS}, got {self.trigger!r}")
        if self.state not in _STATES:
            raise ValueError(f"state must be one of {_STATES}, got {self.state!r}")
        if self.completed_at is not None and self.completed_at < self.requested_at:
            raise ValueError("completed_at precedes requested_at")
        if self.state == STATE_COMPLETED:
            if self.report is None:
                raise ValueError("a completed evaluation must carry its report")
            if self.completed_at is None:
                raise ValueError("a completed evaluation must carry completed_at")
        else:
            if self.report is not None:
                raise ValueError(f"a {self.state} evaluation cannot carry a report")
        if self.state == STATE_ERROR and self.completed_at is None:
            raise ValueError("an errored evaluation must carry completed_at")
        try:
            uuid.UUID(self.eval_id)
        except (ValueError, AttributeError, TypeError):
            raise ValueError(f"eval_id is not a UUID: {self.eval_id!r}") from None

    @property
    def finished(self) -> bool:
        return self.completed_at is not None

    @property
    def verdict(self) -> Optional[str]:
        """The record's observable verdict: the report's verdict when
        completed, ``"error"`` when the evaluation itself failed, ``None``
        while pending."""
        if self.state == STATE_COMPLETED:
            return self.report.get("verdict")
        if self.state == STATE_ERROR:
            return STATE_ERROR
        return None

    def completed(self, completed_at: float, report: dict,
                  bundle_ref: Optional[str]) -> "EvaluationRecord":
        return replace(self, state=STATE_COMPLETED, completed_at=completed_at,
                       report=report, bundle_ref=bundle_ref, error=None)

    def errored(self, completed_at: float, detail: str) -> "EvaluationRecord":
        return replace(self, state=STATE_ERROR, completed_at=completed_at,
                       report=None, bundle_ref=None, error=detail)

    def to_json(self) -> dict:
        return {
            "eval_id": self.eval_id,
            "host_id": self.host_id,
            "trigger": self.trigger,
            "state": self.state,
            "requested_at": to_rfc3339(self.requested_at),
            "completed_at": _opt_stamp(self.completed_at),
            "report": self.report,
            "bundle_ref": self.bundle_ref,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvaluationRecord":
        if not isinstance(obj, dict):
            raise ValueError("evaluation record must be a JSON object")
        known = {"eval_id", "host_id", "trigger", "state", "requested_at",
                 "completed_at", "report", "bundle_ref", "error"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown evaluation record fields: {sorted(unknown)}")
        return cls(
            host_id=obj.get("host_id"),
            trigger=obj.get("trigger"),
            state=obj.get("state"),
            requested_at=from_rfc3339(obj.get("requested_at")),
            completed_at=_opt_parse(obj.get("completed_at")),
            report=obj.get("report"),
            bundle_ref=obj.get("bundle_ref"),
            error=obj.get("error"),
            eval_id=obj.get("eval_id"),
        )
