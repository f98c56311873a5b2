"""Requester-side helper: ask a manager for an appraisal of a target."""

from __future__ import annotations

from typing import Optional

from ..errors import SessionError
from ..negotiation import MAX_HOPS, fresh_nonce, fresh_session_id, request_contract
from ..report import Report
from .config import connect_endpoint


def request_attestation(
    endpoint: str,
    resource: str,
    target: str,
    *,
    hops: int = MAX_HOPS,
    timeout: float = 60.0,
    session_id: Optional[str] = None,
    nonce: Optional[str] = None,
) -> dict:
    """Send one attestation request and wait for the report envelope.

    Returns the envelope dict with the decoded :class:`Report` attached
    under ``"report_obj"``. Raises SessionError if the manager's answer
    is not a report for this session.
    """
    session_id = session_id or fresh_session_id()
    nonce = nonce or fresh_nonce()
    request = request_contract(resource, target, hops=hops,
                               session_id=session_id, nonce=nonce)
    channel = connect_endpoint(endpoint, timeout)
    try:
        channel.send(request.to_json())
        envelope = channel.recv()
    finally:
        channel.close()
    if not isinstance(envelope, dict) or envelope.get("type") != "report":
        raise SessionError(f"manager answered with {envelope!r}, not a report")
    if envelope.get("session_id") != session_id or envelope.get("nonce") != nonce:
        raise SessionError("report envelope does not echo this session")
    try:
        envelope["report_obj"] = Report.from_json(envelope["report"])
    except Exception as exc:
        raise SessionError(f"report envelope carries a malformed report: {exc}") from None
    return envelope
