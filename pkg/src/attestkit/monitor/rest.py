"""JSON-over-HTTP surface for the monitoring service.

Seven routes, stdlib server:

    POST   /hosts                        register a host        -> 201
    GET    /hosts                        roster with last verdict
    DELETE /hosts/{id}                   remove a host
    POST   /hosts/{id}/evaluate          fresh evaluation       -> 201
    GET    /hosts/{id}/reports           history (?from&to&verdict)
    GET    /reports/{eval_id}            one evaluation record
    GET    /healthz                      liveness

Status vocabulary is 200/201/400/404/503; timestamps are RFC 3339 UTC.
Handlers run concurrently (one thread per connection); every mutation
funnels through the service's single-writer lock.  When the server was
given an operator token, every route except /healthz requires it in the
``X-Auth-Token`` header; a mismatch is answered 400 — the token guards
against misdirected requests, not adversaries, and the status set above
is the whole vocabulary this API speaks.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlsplit

from ..errors import (
    MonitorError,
    ServiceClosedError,
    UnknownEvaluationError,
    UnknownHostError,
)
from .records import from_rfc3339
from .service import MonitorService

log = logging.getLogger(__name__)

_VERDICTS = ("pass", "fail", "error")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "am-monitor"

    def log_message(self, fmt, *args):  # keep the test output quiet
        log.debug("http: " + fmt, *args)

    # --- plumbing ---------------------------------------------------------

    @property
    def service(self) -> MonitorService:
        return self.server.service  # type: ignore[attr-defined]

    def _reply(self, status: int, body: dict | list) -> None:
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        obj = json.loads(raw.decode("utf-8"))
        if not isinstance(obj, dict):
            raise ValueError("request body must be a JSON object")
        return obj

    def _gate(self, path: str) -> bool:
        """Common preconditions; replies and returns False when the
        request may not proceed."""
        token = self.server.token  # type: ignore[attr-defined]
        if path != "/healthz":
            if token and self.headers.get("X-Auth-Token") != token:
                self._reply(400, {"error": "missing or wrong operator token"})
                return False
            if self.service.closed:
                self._reply(503, {"error": "service is shutting down"})
                return False
        return True

    # --- verbs ------------------------------------------------------------

    def do_GET(self) -> None:
        url = urlsplit(self.path)
        parts = [p for p in url.path.split("/") if p]
        if not self._gate(url.path):
            return
        try:
            if url.path == "/healthz":
                health = self.service.healthz()
                self._reply(503 if health["status"] == "closing" else 200, health)
            elif url.path == "/hosts":
                self._reply(200, self.service.host_summaries())
            elif len(parts) == 3 and parts[0] == "hosts" and parts[2] == "reports":
                self._get_reports(parts[1], parse_qs(url.query))
            elif len(parts) == 2 and parts[0] == "reports":
                record = self.service.get_evaluation(parts[1])
                self._reply(200, record.to_json())
            else:
                self._reply(404, {"error": f"no such route: GET {url.path}"})
        except (UnknownHostError, UnknownEvaluationError) as exc:
            self._reply(404, {"error": str(exc)})

    def _get_reports(self, host_id: str, query: dict) -> None:
        def single(name: str) -> Optional[str]:
            values = query.get(name)
            return values[-1] if values else None

        try:
            since = single("from")
            until = single("to")
            since_ts = from_rfc3339(since) if since else None
            until_ts = from_rfc3339(until) if until else None
        except ValueError as exc:
            self._reply(400, {"error": f"bad timestamp: {exc}"})
            return
        verdict = single("verdict")
        if verdict is not None and verdict not in _VERDICTS:
            self._reply(400, {"error": f"verdict must be one of {list(_VERDICTS)}"})
            return
        records = self.service.query_reports(
            host_id, since=since_ts, until=until_ts, verdict=verdict)
        self._reply(200, [r.to_json() for r in records])

    def do_POST(self) -> None:
        url = urlsplit(self.path)
        parts = [p for p in url.path.split("/") if p]
        if not self._gate(url.path):
            return
        try:
            body = self._read_body()
        except (ValueError, UnicodeDecodeError) as exc:
            self._reply(400, {"error": f"malformed request body: {exc}"})
            return
        try:
            if url.path == "/hosts":
                record = self.service.register_host(
                    display_name=body.get("display_name"),
                    am_endpoint=body.get("am_endpoint"),
                    resource=body.get("resource"),
                    interval=body.get("interval"),
                    anchor_key_id=body.get("anchor_key_id"),
                )
                self._reply(201, record.to_json())
            elif len(parts) == 3 and parts[0] == "hosts" and parts[2] == "evaluate":
                eval_id = self.service.request_evaluation(
                    parts[1], resource=body.get("resource"))
                self._reply(201, {"eval_id": eval_id})
            else:
                self._reply(404, {"error": f"no such route: POST {url.path}"})
        except UnknownHostError as exc:
            self._reply(404, {"error": str(exc)})
        except ServiceClosedError as exc:
            self._reply(503, {"error": str(exc)})
        except (ValueError, TypeError) as exc:
            self._reply(400, {"error": str(exc)})

    def do_DELETE(self) -> None:
        url = urlsplit(self.path)
        parts = [p for p in url.path.split("/") if p]
        if not self._gate(url.path):
            return
        try:
            if len(parts) == 2 and parts[0] == "hosts":
                self.service.remove_host(parts[1])
                self._reply(200, {"removed": parts[1]})
            else:
                self._reply(404, {"error": f"no such route: DELETE {url.path}"})
        except UnknownHostError as exc:
            self._reply(404, {"error": str(exc)})
        except ServiceClosedError as exc:
            self._reply(503, {"error": str(exc)})


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, service: MonitorService, token: Optional[str]):
        super().__init__(address, _Handler)
        self.service = service
        self.token = token


class MonitorApi:
    """Serves a MonitorService over HTTP on its own thread."""

    def __init__(self, service: MonitorService, listen: str = "127.0.0.1:0",
                 token: Optional[str] = None):
        host, _, port = listen.rpartition(":")
        if not host or not port.isdigit():
            raise MonitorError(f"listen address must be host:port, got {listen!r}")
        self._server = _Server((host, int(port)), service, token)
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "MonitorApi":
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="monitor-http", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=10)
        self._server.server_close()

    def __enter__(self) -> "MonitorApi":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
