"""Canonical JSON encoding.

Every byte string this toolkit signs, hashes, or compares is produced
here: sorted keys, no insignificant whitespace, ASCII-escaped output.
The encoding is a function of the value, so two equal values always
serialize to identical bytes and two distinct canonical byte strings
always denote distinct values.
"""

from __future__ import annotations

import json
from typing import Any


def dumps(value: Any) -> bytes:
    """Serialize ``value`` to canonical JSON bytes."""
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    ).encode("ascii")


def loads(data: bytes) -> Any:
    """Parse JSON bytes (canonical or not)."""
    return json.loads(data.decode("utf-8"))


def is_canonical(data: bytes) -> bool:
    """True iff ``data`` is exactly the canonical encoding of its own value."""
    try:
        return dumps(loads(data)) == data
    except (ValueError, UnicodeDecodeError):
        return False
