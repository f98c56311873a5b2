"""Desk-scale file-access tracing for ASP children.

When tracing is enabled, run_asp puts a directory holding this
``sitecustomize`` on the child's PYTHONPATH. The interpreter imports it
at startup; it installs an audit hook that appends every ``open`` path
the process touches to the file named by ATTESTKIT_TRACE_FILE. The
isolation audit then checks that nothing outside the privilege manifest
and the session workspace was opened.

This stands in for a syscall tracer: the children are Python, so the
interpreter's own audit events see every open that matters here.
"""

from __future__ import annotations

from pathlib import Path

SITECUSTOMIZE = '''\
import os
import sys

_trace_path = os.environ.get("ATTESTKIT_TRACE_FILE")
if _trace_path:
    try:
        # Opened before the hook exists, so logging does not self-trigger.
        _trace = open(_trace_path, "a", buffering=1)

        def _hook(event, args):
            if event == "open":
                target = args[0]
                if isinstance(target, bytes):
                    try:
                        target = target.decode()
                    except UnicodeDecodeError:
                        return
                if isinstance(target, str):
                    try:
                        _trace.write("%d open %s\\n" % (os.getpid(), target))
                    except (OSError, ValueError):
                        pass

        sys.addaudithook(_hook)
    except OSError:
        pass
'''


def ensure_tracer_dir(directory: str | Path) -> str:
    """Write the sitecustomize module into ``directory``; returns the
    directory path for use as PYTHONPATH."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / "sitecustomize.py"
    if not target.exists() or target.read_text(encoding="utf-8") != SITECUSTOMIZE:
        target.write_text(SITECUSTOMIZE, encoding="utf-8")
    return str(directory)


def read_trace(trace_file: str | Path) -> list[tuple[int, str]]:
    """Parse a trace file into (pid, path) rows."""
    path = Path(trace_file)
    if not path.exists():
        return []
    rows = []
    for line in path.read_text(encoding="utf-8", errors="replace").splitlines():
        parts = line.split(" ", 2)
        if len(parts) == 3 and parts[1] == "open":
            try:
                rows.append((int(parts[0]), parts[2]))
            except ValueError:
                continue
    return rows
