"""Attestation service providers: single-function child executables.

An ASP is the only thing in this system that touches a target directly.
Each invocation is one short-lived child process: the parent writes one
request frame to the child's stdin, the child answers with one result
frame on stdout and exits. Exit status 0 is success, 1 a functional
error (the result frame carries the detail), 2 a protocol error.

The child runs with the session workspace as its working directory and
a minimal environment; concurrency isolation rides on the category
tokens the session assigns (exported as ATTESTKIT_CATEGORIES).
"""

from __future__ import annotations

import base64
import binascii
import io
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .. import framing
from ..errors import (
    AspProtocolError,
    AspSpawnError,
    AspTimeoutError,
    MetadataError,
    OversizeEvidenceError,
)
from ..mspec import MeasurementVariable
from ..registry import ComponentKind, ComponentMetadata, Registry

DEFAULT_ASP_TIMEOUT = 30.0
DEFAULT_MAX_EVIDENCE = 16 * 1024 * 1024

OK = "ok"
ERROR = "error"

AUDIT_LOG = "process_audit.log"


@dataclass(frozen=True)
class AspRequest:
    asp_uuid: str
    function: str
    variable: MeasurementVariable
    workspace: str
    session_categories: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            "type": "asp-request",
            "asp_uuid": self.asp_uuid,
            "function": self.function,
            "variable": self.variable.to_json(),
            "workspace": self.workspace,
            "session_categories": list(self.session_categories),
        }

    @classmethod
    def from_json(cls, obj: object) -> "AspRequest":
        if not isinstance(obj, dict) or obj.get("type") != "asp-request":
            raise AspProtocolError("not an asp-request body")
        try:
            return cls(
                asp_uuid=obj["asp_uuid"],
                function=obj["function"],
                variable=MeasurementVariable.from_json(obj["variable"]),
                workspace=obj["workspace"],
                session_categories=tuple(int(c) for c in obj["session_categories"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise AspProtocolError(f"malformed asp-request: {exc}") from None


@dataclass(frozen=True)
class AspResult:
    status: str  # OK | ERROR
    media_type: str = ""
    evidence: bytes = b""
    produced_variables: tuple[MeasurementVariable, ...] = ()
    error_detail: str = ""
    pid: Optional[int] = None  # filled by run_asp for the process audit

    def to_json(self) -> dict:
        return {
            "type": "asp-result",
            "status": self.status,
            "media_type": self.media_type,
            "evidence": base64.b64encode(self.evidence).decode("ascii"),
            "produced_variables": [v.to_json() for v in self.produced_variables],
            "error_detail": self.error_detail,
        }

    @classmethod
    def from_json(cls, obj: object) -> "AspResult":
        if not isinstance(obj, dict) or obj.get("type") != "asp-result":
            raise AspProtocolError("not an asp-result body")
        status = obj.get("status")
        if status not in (OK, ERROR):
            raise AspProtocolError(f"unknown asp-result status {status!r}")
        try:
            evidence = base64.b64decode(obj["evidence"], validate=True)
            produced = tuple(
                MeasurementVariable.from_json(v) for v in obj["produced_variables"]
            )
            return cls(
                status=status,
                media_type=obj["media_type"],
                evidence=evidence,
                produced_variables=produced,
                error_detail=obj.get("error_detail", ""),
            )
        except (KeyError, TypeError, ValueError, binascii.Error) as exc:
            raise AspProtocolError(f"malformed asp-result: {exc}") from None


def _restricted_env(
    workspace: str,
    categories: Sequence[int],
    trace_dir: Optional[str],
    trace_file: Optional[str],
) -> dict[str, str]:
    env = {
        "PATH": "/usr/bin:/bin",
        "HOME": workspace,
        "LC_ALL": "C",
        "ATTESTKIT_CATEGORIES": ",".join(str(c) for c in categories),
    }
    if trace_dir:
        env["PYTHONPATH"] = trace_dir
        env["ATTESTKIT_TRACE_FILE"] = trace_file or ""
    return env


def _audit(workspace: str, line: str) -> None:
    try:
        with open(os.path.join(workspace, AUDIT_LOG), "a", encoding="utf-8") as log:
            log.write(line + "\n")
    except OSError:
        pass


def run_asp(
    registry: Registry,
    request: AspRequest,
    timeout: float = DEFAULT_ASP_TIMEOUT,
    max_evidence: int = DEFAULT_MAX_EVIDENCE,
    trace_dir: Optional[str] = None,
    trace_file: Optional[str] = None,
) -> AspResult:
    """Spawn the registered ASP and run one request/response exchange.

    The child gets the request on stdin and the session workspace as
    cwd; its one result frame is read off stdout. Functional failures
    come back as ``status=error`` results; contract violations (no
    frame, bad frame, timeout, oversized evidence) raise.
    """
    meta = registry.get(request.asp_uuid)
    if meta.kind is not ComponentKind.ASP:
        raise MetadataError(f"component {request.asp_uuid} is a {meta.kind.value}, not an asp")
    if not registry.is_valid(request.asp_uuid):
        raise MetadataError(f"asp {request.asp_uuid} is invalidated")
    executable = meta.executable
    assert executable is not None
    workspace = request.workspace
    if not os.path.isdir(workspace):
        raise AspSpawnError(f"workspace {workspace} does not exist")

    env = _restricted_env(workspace, request.session_categories, trace_dir, trace_file)
    try:
        proc = subprocess.Popen(
            [executable],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=workspace,
            env=env,
        )
    except OSError as exc:
        raise AspSpawnError(f"cannot spawn {executable}: {exc}") from None

    _audit(workspace, f"asp {proc.pid} {request.function}")
    try:
        stdout, stderr = proc.communicate(framing.encode_frame(request.to_json()), timeout=timeout)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.communicate()
        raise AspTimeoutError(
            f"asp {request.function} exceeded its {timeout:.0f}s timeout"
        ) from None

    rc = proc.returncode
    if rc == 2 or not stdout:
        detail = stderr.decode("utf-8", "replace").strip()
        raise AspProtocolError(
            f"asp {request.function} violated the child protocol (exit {rc})"
            + (f": {detail}" if detail else "")
        )
    try:
        body = framing.read_stream_frame(io.BytesIO(stdout))
    except Exception as exc:
        raise AspProtocolError(f"asp {request.function} wrote no valid result frame: {exc}") from None
    result = AspResult.from_json(body)
    if len(result.evidence) > max_evidence:
        raise OversizeEvidenceError(len(result.evidence), max_evidence)
    if rc != 0 and result.status == OK:
        result = AspResult(
            status=ERROR,
            media_type=result.media_type,
            evidence=result.evidence,
            produced_variables=result.produced_variables,
            error_detail=f"exit status {rc} with an ok result frame",
        )
    return AspResult(
        status=result.status,
        media_type=result.media_type,
        evidence=result.evidence,
        produced_variables=result.produced_variables,
        error_detail=result.error_detail,
        pid=proc.pid,
    )
