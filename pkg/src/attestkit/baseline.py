"""Baseline store: expected measurements, append-only.

One JSON record per line maps a variable identity to an expected
evidence digest and media type. Identities may accrue several records
over time (re-baselining, composed specs measuring one variable two
ways); comparison treats a node as matching when *any* record for its
identity matches, mismatching when records exist and none match, and
unknown when the identity has never been baselined.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import StoreError
from .graph import MeasurementGraph
from .mspec import SUCCESS_FEATURE, MeasurementVariable

MATCH = "match"
MISMATCH = "mismatch"
UNKNOWN = "unknown"


def _identity_key(variable: MeasurementVariable) -> str:
    return f"{variable.vtype}\x00{variable.address}"


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class BaselineRecord:
    vtype: str
    address: str
    digest: str
    media_type: str

    def to_json(self) -> dict:
        return {
            "vtype": self.vtype,
            "address": self.address,
            "digest": self.digest,
            "media_type": self.media_type,
        }


def append_records(path: str | Path, records: Iterable[BaselineRecord]) -> int:
    """Append records to the store file; returns how many were written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("a", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
            count += 1
    return count


def load_records(path: str | Path) -> list[BaselineRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            records.append(
                BaselineRecord(
                    vtype=obj["vtype"],
                    address=obj["address"],
                    digest=obj["digest"],
                    media_type=obj["media_type"],
                )
            )
        except (ValueError, KeyError, TypeError):
            raise StoreError(f"baseline store {path} line {line_no} is malformed") from None
    return records


def records_from_graph(graph: MeasurementGraph) -> list[BaselineRecord]:
    """Baseline a known-good graph: one record per evidence-bearing node.

    Success leaves and error nodes carry no comparable evidence and are
    skipped.
    """
    records = []
    for node in graph.nodes:
        if node.error_detail is not None or node.asp_feature == SUCCESS_FEATURE:
            continue
        records.append(
            BaselineRecord(
                vtype=node.variable.vtype,
                address=node.variable.address,
                digest=_digest(node.data),
                media_type=node.media_type,
            )
        )
    return records


def compare_graph(
    graph: MeasurementGraph, records: Iterable[BaselineRecord]
) -> dict[int, str]:
    """Per-node verdicts: node_id -> match | mismatch | unknown.

    Success leaves always match (they assert nothing); error nodes are
    unknown (there is nothing to compare).
    """
    by_identity: dict[str, set[str]] = {}
    for record in records:
        key = _identity_key(MeasurementVariable(record.vtype, record.address))
        by_identity.setdefault(key, set()).add(record.digest)

    verdicts: dict[int, str] = {}
    for node in graph.nodes:
        if node.asp_feature == SUCCESS_FEATURE and node.error_detail is None:
            verdicts[node.node_id] = MATCH
            continue
        if node.error_detail is not None:
            verdicts[node.node_id] = UNKNOWN
            continue
        expected = by_identity.get(_identity_key(node.variable))
        if expected is None:
            verdicts[node.node_id] = UNKNOWN
        elif _digest(node.data) in expected:
            verdicts[node.node_id] = MATCH
        else:
            verdicts[node.node_id] = MISMATCH
    return verdicts
