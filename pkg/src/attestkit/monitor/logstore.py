"""Append-only JSONL record log with replay and compaction.

Each line is one write: ``{"key": <id>, "record": {...}}`` upserts,
``{"key": <id>, "record": null}`` is a tombstone.  Replay folds the log
last-wins, so re-writing a key supersedes earlier lines without ever
mutating them — crash safety comes from the append discipline alone.
A torn final line (process killed mid-write) is ignored on replay.

Compaction rewrites the live fold into a fresh file and atomically
swaps it into place, dropping superseded lines and tombstones.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Optional

from ..errors import StoreError


class RecordLog:
    """Single-writer append log over one JSONL file."""

    def __init__(self, path: Path):
        self._path = Path(path)
        self._lock = threading.Lock()
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self._path, "a", encoding="utf-8")

    @property
    def path(self) -> Path:
        return self._path

    def append(self, key: str, record: Optional[dict]) -> None:
        """Write one upsert (or tombstone when ``record`` is None)."""
        if not isinstance(key, str) or not key:
            raise StoreError("record key must be a non-empty string")
        line = json.dumps({"key": key, "record": record}, sort_keys=True)
        with self._lock:
            if self._handle.closed:
                raise StoreError(f"record log {self._path.name} is closed")
            self._handle.write(line + "\n")
            # flushed to the OS on every append: survives process death;
            # compaction fsyncs before its atomic swap
            self._handle.flush()

    def replay(self) -> dict[str, dict]:
        """Fold the log into its live state: key -> latest record."""
        live: dict[str, dict] = {}
        with self._lock:
            if not self._handle.closed:
                self._handle.flush()
            try:
                raw = self._path.read_text(encoding="utf-8")
            except FileNotFoundError:
                return live
        for line in raw.splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError:
                # a torn tail from an interrupted write; everything before
                # it is intact, so stop folding here
                break
            if not isinstance(entry, dict) or "key" not in entry:
                break
            key, record = entry["key"], entry.get("record")
            if record is None:
                live.pop(key, None)
            else:
                live[key] = record
        return live

    def compact(self, live: Optional[dict[str, dict]] = None) -> None:
        """Rewrite the file to hold exactly the live fold, atomically."""
        if live is None:
            live = self.replay()
        with self._lock:
            tmp = self._path.with_suffix(self._path.suffix + ".compact")
            with open(tmp, "w", encoding="utf-8") as fresh:
                for key in sorted(live):
                    fresh.write(json.dumps({"key": key, "record": live[key]},
                                           sort_keys=True) + "\n")
                fresh.flush()
                os.fsync(fresh.fileno())
            if not self._handle.closed:
                self._handle.close()
            os.replace(tmp, self._path)
            self._handle = open(self._path, "a", encoding="utf-8")

    def close(self) -> None:
        with self._lock:
            if not self._handle.closed:
                self._handle.close()

    def __enter__(self) -> "RecordLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
