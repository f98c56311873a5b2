"""Attestation manager configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .. import framing
from ..errors import ConfigError

OVERFLOW_QUEUE = "queue"
OVERFLOW_REFUSE = "refuse"


def connect_endpoint(endpoint: str, timeout: float = framing.DEFAULT_MESSAGE_TIMEOUT):
    """Open a channel to ``tcp:host:port`` or ``unix:/path``; a bare
    ``host:port`` is treated as tcp."""
    if endpoint.startswith("unix:"):
        return framing.connect_unix(endpoint[len("unix:"):], timeout)
    if endpoint.startswith("tcp:"):
        endpoint = endpoint[len("tcp:"):]
    host, port = framing.parse_endpoint(endpoint)
    return framing.connect_tcp(host, port, timeout)


def endpoint_kind(endpoint: str) -> str:
    return "unix" if endpoint.startswith("unix:") else "tcp"


@dataclass(frozen=True)
class AmConfig:
    name: str
    store_root: str
    policy_path: str
    listen_tcp: Optional[str] = None  # host:port
    listen_unix: Optional[str] = None  # socket path
    peers: Mapping[str, str] = field(default_factory=dict)  # name -> endpoint
    max_sessions: int = 4
    category_pool: int = 8
    overflow: str = OVERFLOW_QUEUE
    queue_timeout: float = 30.0
    session_timeout: float = 60.0
    connect_timeout: float = framing.DEFAULT_MESSAGE_TIMEOUT
    asp_timeout: float = 30.0
    keep_workspaces: bool = False
    trace_dir: Optional[str] = None
    trace_file: Optional[str] = None

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise ConfigError("manager name must be a non-empty string")
        if not self.store_root:
            raise ConfigError("store_root is required")
        if not self.policy_path:
            raise ConfigError("policy_path is required")
        if self.listen_tcp is None and self.listen_unix is None:
            raise ConfigError("at least one listener (tcp or unix) is required")
        if self.listen_tcp is not None:
            framing.parse_endpoint(self.listen_tcp)
        if self.max_sessions < 1:
            raise ConfigError("max_sessions must be at least 1")
        if self.category_pool < self.max_sessions:
            raise ConfigError(
                "category_pool must cover max_sessions: every concurrent "
                f"session holds a category token ({self.category_pool} < {self.max_sessions})"
            )
        if self.overflow not in (OVERFLOW_QUEUE, OVERFLOW_REFUSE):
            raise ConfigError(f"overflow must be queue or refuse, not {self.overflow!r}")
        own = self.own_endpoints()
        for key, value in dict(self.peers).items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise ConfigError("peers must map names to endpoint strings")
            if value in own or f"tcp:{value}" in own or key == self.name:
                raise ConfigError(
                    f"peer {key!r} points back at this manager; "
                    "a deferral cycle cannot be configured"
                )
        for bound in ("queue_timeout", "session_timeout", "connect_timeout", "asp_timeout"):
            if getattr(self, bound) <= 0:
                raise ConfigError(f"{bound} must be positive")

    def own_endpoints(self) -> set[str]:
        """Every address that reaches this manager (defer-loop guard)."""
        endpoints = set()
        if self.listen_tcp:
            endpoints.add(f"tcp:{self.listen_tcp}")
            endpoints.add(self.listen_tcp)
        if self.listen_unix:
            endpoints.add(f"unix:{self.listen_unix}")
        return endpoints

    @classmethod
    def from_json(cls, obj: object) -> "AmConfig":
        if not isinstance(obj, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {
            "name", "store", "policy", "listen", "peers", "max_sessions",
            "category_pool", "overflow", "queue_timeout", "session_timeout",
            "connect_timeout", "asp_timeout", "keep_workspaces",
            "trace_dir", "trace_file",
        }
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown configuration fields: {sorted(unknown)}")
        listen = obj.get("listen", {})
        if not isinstance(listen, dict) or set(listen) - {"tcp", "unix"}:
            raise ConfigError('listen must be an object with "tcp" and/or "unix"')
        try:
            return cls(
                name=obj.get("name", ""),
                store_root=obj.get("store", ""),
                policy_path=obj.get("policy", ""),
                listen_tcp=listen.get("tcp"),
                listen_unix=listen.get("unix"),
                peers=dict(obj.get("peers", {})),
                max_sessions=int(obj.get("max_sessions", 4)),
                category_pool=int(obj.get("category_pool", 8)),
                overflow=obj.get("overflow", OVERFLOW_QUEUE),
                queue_timeout=float(obj.get("queue_timeout", 30.0)),
                session_timeout=float(obj.get("session_timeout", 60.0)),
                connect_timeout=float(obj.get("connect_timeout", framing.DEFAULT_MESSAGE_TIMEOUT)),
                asp_timeout=float(obj.get("asp_timeout", 30.0)),
                keep_workspaces=bool(obj.get("keep_workspaces", False)),
                trace_dir=obj.get("trace_dir"),
                trace_file=obj.get("trace_file"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed configuration value: {exc}") from None


def load_config(path: str | Path) -> AmConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return AmConfig.from_json(obj)
