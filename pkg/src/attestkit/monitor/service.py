"""The host-monitoring service: roster, scheduler, and report history.

The service is a pure client of a local attestation manager — it embeds
no measurement logic.  Evaluations are carried out by ``am_client``, a
callable ``(am_endpoint, resource, target) -> envelope dict`` that
defaults to dialling the configured manager endpoint; tests inject
stubs.  All state lives in two append-only record logs replayed at
start-up, so a restart loses nothing that finished.

Concurrency: HTTP handlers (and any other callers) may call in from
many threads.  All map mutations and log appends happen under one
service lock (the single-writer rule); each host additionally has an
evaluation mutex so two evaluations of the same host never overlap.
With ``run_inline=True`` evaluations execute synchronously on the
calling thread, which makes scheduler behaviour deterministic under a
test-controlled clock; the production path uses worker threads.
"""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from pathlib import Path
from typing import Callable, Optional

from ..errors import (
    MonitorError,
    ServiceClosedError,
    UnknownEvaluationError,
    UnknownHostError,
)
from .logstore import RecordLog
from .records import (
    STATE_PENDING,
    TRIGGER_ON_DEMAND,
    TRIGGER_PERIODIC,
    EvaluationRecord,
    HostRecord,
    to_rfc3339,
)

log = logging.getLogger(__name__)

AmClient = Callable[[str, str, str], dict]


def _default_am_client(am_endpoint: str, resource: str, target: str) -> dict:
    from ..am.client import request_attestation

    envelope = request_attestation(am_endpoint, resource, target)
    envelope.pop("report_obj", None)
    return envelope


class MonitorService:
    def __init__(self, root, *, am_endpoint: Optional[str] = None,
                 am_client: Optional[AmClient] = None, run_inline: bool = False,
                 clock: Callable[[], float] = time.time):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._am_endpoint = am_endpoint
        self._am_client = am_client if am_client is not None else _default_am_client
        self._run_inline = run_inline
        self._clock = clock
        self._lock = threading.RLock()
        self._closed = False
        self._hosts: dict[str, HostRecord] = {}
        self._evals: dict[str, EvaluationRecord] = {}
        self._last_done: dict[str, float] = {}
        self._inflight: dict[str, int] = {}
        self._busy: dict[str, threading.Lock] = {}
        self._threads: set[threading.Thread] = set()
        self._hosts_log = RecordLog(self.root / "hosts.jsonl")
        self._evals_log = RecordLog(self.root / "evaluations.jsonl")
        self._replay()

    # --- start-up ---------------------------------------------------------

    def _replay(self) -> None:
        for key, obj in self._hosts_log.replay().items():
            record = HostRecord.from_json(obj)
            self._hosts[record.host_id] = record
            self._busy[record.host_id] = threading.Lock()
        for key, obj in self._evals_log.replay().items():
            record = EvaluationRecord.from_json(obj)
            if record.state == STATE_PENDING:
                # the previous process died mid-evaluation; close the book
                record = record.errored(
                    max(self._clock(), record.requested_at),
                    "service restarted before the evaluation completed",
                )
                self._evals_log.append(record.eval_id, record.to_json())
            self._evals[record.eval_id] = record
            if record.completed_at is not None:
                prior = self._last_done.get(record.host_id)
                if prior is None or record.completed_at > prior:
                    self._last_done[record.host_id] = record.completed_at

    # --- host roster ------------------------------------------------------

    def register_host(self, display_name: str, am_endpoint: str, resource: str,
                      interval: Optional[float] = None,
                      anchor_key_id: Optional[str] = None) -> HostRecord:
        record = HostRecord(
            display_name=display_name, am_endpoint=am_endpoint,
            resource=resource, interval=interval, anchor_key_id=anchor_key_id,
        )
        with self._lock:
            self._require_open()
            if any(h.am_endpoint == record.am_endpoint for h in self._hosts.values()):
                log.warning("endpoint %s is already monitored under another host",
                            record.am_endpoint)
            self._hosts[record.host_id] = record
            self._busy[record.host_id] = threading.Lock()
            self._hosts_log.append(record.host_id, record.to_json())
        return record

    def list_hosts(self) -> list[HostRecord]:
        with self._lock:
            return sorted(self._hosts.values(),
                          key=lambda h: (h.display_name, h.host_id))

    def get_host(self, host_id: str) -> HostRecord:
        with self._lock:
            try:
                return self._hosts[host_id]
            except KeyError:
                raise UnknownHostError(host_id) from None

    def remove_host(self, host_id: str) -> None:
        """Drop a host from the roster; its schedule dies with it, its
        evaluation history stays readable by eval_id."""
        with self._lock:
            self._require_open()
            if host_id not in self._hosts:
                raise UnknownHostError(host_id)
            del self._hosts[host_id]
            self._busy.pop(host_id, None)
            self._hosts_log.append(host_id, None)

    def host_summaries(self) -> list[dict]:
        """Roster rows enriched for the console: latest outcome per host."""
        with self._lock:
            hosts = sorted(self._hosts.values(),
                           key=lambda h: (h.display_name, h.host_id))
            rows = []
            for host in hosts:
                latest = None
                for rec in self._evals.values():
                    if rec.host_id != host.host_id or rec.completed_at is None:
                        continue
                    if latest is None or rec.completed_at > latest.completed_at:
                        latest = rec
                row = host.to_json()
                row["last_verdict"] = latest.verdict if latest else None
                row["last_completed_at"] = (
                    to_rfc3339(latest.completed_at) if latest else None
                )
                row["busy"] = bool(self._inflight.get(host.host_id))
                rows.append(row)
            return rows

    # --- evaluations ------------------------------------------------------

    def request_evaluation(self, host_id: str, resource: Optional[str] = None,
                           trigger: str = TRIGGER_ON_DEMAND) -> str:
        """Enqueue one evaluation of a registered host; returns its eval_id.

        The evaluation runs on a worker thread (or inline when the
        service was built that way); an unreachable manager produces an
        error-state record, never an exception out of the worker.
        """
        with self._lock:
            self._require_open()
            host = self._hosts.get(host_id)
            if host is None:
                raise UnknownHostError(host_id)
            record = EvaluationRecord(
                host_id=host_id, trigger=trigger, state=STATE_PENDING,
                requested_at=self._clock(),
            )
            self._admit(record)
        self._launch(record.eval_id, host, resource or host.resource)
        return record.eval_id

    def scheduler_tick(self, now: Optional[float] = None) -> frozenset:
        """Trigger every periodic host whose last finished evaluation is at
        least one interval old (or which has never been evaluated), skipping
        hosts with an evaluation already in flight.  Returns the eval_ids
        started by this tick."""
        if now is None:
            now = self._clock()
        started: list[tuple[EvaluationRecord, HostRecord]] = []
        with self._lock:
            if self._closed:
                return frozenset()
            for host in self._hosts.values():
                if host.interval is None:
                    continue
                if self._inflight.get(host.host_id):
                    continue
                last = self._last_done.get(host.host_id)
                if last is not None and (now - last) < host.interval:
                    continue
                record = EvaluationRecord(
                    host_id=host.host_id, trigger=TRIGGER_PERIODIC,
                    state=STATE_PENDING, requested_at=now,
                )
                self._admit(record)
                started.append((record, host))
        for record, host in started:
            self._launch(record.eval_id, host, host.resource)
        return frozenset(record.eval_id for record, _host in started)

    def _admit(self, record: EvaluationRecord) -> None:
        self._evals[record.eval_id] = record
        self._evals_log.append(record.eval_id, record.to_json())
        count = self._inflight.get(record.host_id, 0)
        self._inflight[record.host_id] = count + 1

    def _launch(self, eval_id: str, host: HostRecord, resource: str) -> None:
        if self._run_inline:
            self._execute(eval_id, host, resource)
            return
        worker = threading.Thread(
            target=self._execute, args=(eval_id, host, resource),
            name=f"eval-{eval_id[:8]}", daemon=True,
        )
        with self._lock:
            self._threads.add(worker)
        worker.start()

    def _execute(self, eval_id: str, host: HostRecord, resource: str) -> None:
        record = self._evals[eval_id]
        busy = self._busy.get(host.host_id)
        if busy is None:  # host removed between admit and launch
            busy = threading.Lock()
        try:
            with busy:
                try:
                    envelope = self._am_client(self._am_endpoint, resource,
                                               host.am_endpoint)
                    report = envelope.get("report") if isinstance(envelope, dict) else None
                    if not isinstance(report, dict):
                        raise MonitorError("manager answered without a report")
                    done = record.completed(
                        max(self._clock(), record.requested_at),
                        report, envelope.get("bundle_blob"),
                    )
                except Exception as exc:
                    done = record.errored(
                        max(self._clock(), record.requested_at),
                        str(exc) or type(exc).__name__,
                    )
                with self._lock:
                    self._evals[eval_id] = done
                    self._evals_log.append(eval_id, done.to_json())
                    prior = self._last_done.get(host.host_id)
                    if prior is None or done.completed_at > prior:
                        self._last_done[host.host_id] = done.completed_at
        finally:
            with self._lock:
                count = self._inflight.get(host.host_id, 0)
                if count <= 1:
                    self._inflight.pop(host.host_id, None)
                else:
                    self._inflight[host.host_id] = count - 1
                self._threads.discard(threading.current_thread())

    # --- history ----------------------------------------------------------

    def query_reports(self, host_id: str, *, since: Optional[float] = None,
                      until: Optional[float] = None,
                      verdict: Optional[str] = None) -> list[EvaluationRecord]:
        """A host's evaluation history, newest request first.  The time
        range is inclusive on both ends; all filters are conjunctive."""
        with self._lock:
            if host_id not in self._hosts:
                raise UnknownHostError(host_id)
            records = [r for r in self._evals.values() if r.host_id == host_id]
        if since is not None:
            records = [r for r in records if r.requested_at >= since]
        if until is not None:
            records = [r for r in records if r.requested_at <= until]
        if verdict is not None:
            records = [r for r in records if r.verdict == verdict]
        records.sort(key=lambda r: (-r.requested_at, r.eval_id))
        return records

    def get_evaluation(self, eval_id: str) -> EvaluationRecord:
        with self._lock:
            try:
                return self._evals[eval_id]
            except KeyError:
                raise UnknownEvaluationError(eval_id) from None

    def evaluation_count(self) -> int:
        with self._lock:
            return len(self._evals)

    # --- raw bundle copies ------------------------------------------------

    def store_bundle(self, data: bytes) -> str:
        """Keep a content-addressed copy of a raw evidence bundle."""
        digest = hashlib.sha256(data).hexdigest()
        bundles = self.root / "bundles"
        bundles.mkdir(exist_ok=True)
        path = bundles / digest
        if not path.exists():
            path.write_bytes(data)
        return digest

    def read_bundle(self, digest: str) -> bytes:
        path = self.root / "bundles" / digest
        if not path.is_file():
            raise MonitorError(f"no stored bundle {digest}")
        return path.read_bytes()

    def gc_bundles(self, max_age_seconds: float,
                   now: Optional[float] = None) -> list[str]:
        """Drop stored bundle copies older than the age limit (by file
        modification time); reports, being small, are kept forever."""
        if now is None:
            now = time.time()
        bundles = self.root / "bundles"
        removed = []
        if bundles.is_dir():
            for path in bundles.iterdir():
                if now - path.stat().st_mtime > max_age_seconds:
                    path.unlink(missing_ok=True)
                    removed.append(path.name)
        return sorted(removed)

    # --- lifecycle --------------------------------------------------------

    def healthz(self) -> dict:
        with self._lock:
            return {
                "status": "closing" if self._closed else "ok",
                "hosts": len(self._hosts),
                "evaluations": len(self._evals),
            }

    @property
    def closed(self) -> bool:
        with self._lock:
            return self._closed

    def compact(self) -> None:
        """Squash both logs down to their live fold."""
        with self._lock:
            self._hosts_log.compact(
                {h.host_id: h.to_json() for h in self._hosts.values()})
            self._evals_log.compact(
                {r.eval_id: r.to_json() for r in self._evals.values()})

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            workers = list(self._threads)
        for worker in workers:
            worker.join(timeout=30)
        with self._lock:
            self._hosts_log.close()
            self._evals_log.close()

    def _require_open(self) -> None:
        if self._closed:
            raise ServiceClosedError("the monitor is shutting down")

    def __enter__(self) -> "MonitorService":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
