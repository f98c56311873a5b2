"""Host-monitoring service: roster, scheduler, report history, REST API."""

from .records import EvaluationRecord, HostRecord, from_rfc3339, to_rfc3339
from .rest import MonitorApi
from .service import MonitorService

__all__ = [
    "EvaluationRecord",
    "HostRecord",
    "MonitorApi",
    "MonitorService",
    "from_rfc3339",
    "to_rfc3339",
]
