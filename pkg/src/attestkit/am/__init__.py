"""Attestation manager daemon, its configuration, and the client helper."""

from .config import AmConfig, connect_endpoint, load_config
from .daemon import AttestationManager
from .client import request_attestation

__all__ = [
    "AmConfig",
    "AttestationManager",
    "connect_endpoint",
    "load_config",
    "request_attestation",
]
