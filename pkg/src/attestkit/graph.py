"""The measurement graph: evidence nodes plus derivation edges.

A graph is what one spec evaluation produced on one target at one time,
bound to the session nonce. Node ids are dense from 0 in discharge
order and parent edges always point at smaller ids, so the graph is a
DAG by construction and the canonical serialization (sorted-key JSON,
nodes in id order) is unique for a given graph value.
"""

from __future__ import annotations

import base64
import binascii
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence

from . import canonical
from .errors import MalformedBundleError
from .mspec import EvalNode, MeasurementVariable
from .registry import check_uuid

_RFC3339_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?Z$")


def now_rfc3339() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class EvidenceNode:
    node_id: int
    variable: MeasurementVariable
    asp_feature: str
    media_type: str
    data: bytes
    parent_edges: frozenset[int] = frozenset()
    error_detail: Optional[str] = None

    def __post_init__(self):
        if self.node_id < 0:
            raise ValueError("node_id must be nonnegative")
        for parent in self.parent_edges:
            if parent >= self.node_id:
                raise ValueError(
                    f"node {self.node_id}: parent edge {parent} does not point backwards"
                )

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "variable": self.variable.to_json(),
            "asp_feature": self.asp_feature,
            "media_type": self.media_type,
            "data": base64.b64encode(self.data).decode("ascii"),
            "parent_edges": sorted(self.parent_edges),
            "error_detail": self.error_detail,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvidenceNode":
        _require_fields(
            obj,
            {"node_id", "variable", "asp_feature", "media_type", "data", "parent_edges", "error_detail"},
            "evidence node",
        )
        if not isinstance(obj["node_id"], int) or isinstance(obj["node_id"], bool):
            raise MalformedBundleError("node_id must be an integer")
        variable = obj["variable"]
        if (
            not isinstance(variable, dict)
            or set(variable) != {"vtype", "address"}
            or not all(isinstance(variable[k], str) for k in ("vtype", "address"))
        ):
            raise MalformedBundleError("variable must be {vtype, address} of strings")
        for key in ("asp_feature", "media_type", "data"):
            if not isinstance(obj[key], str):
                raise MalformedBundleError(f"{key} must be a string")
        edges = obj["parent_edges"]
        if not isinstance(edges, list) or not all(
            isinstance(e, int) and not isinstance(e, bool) for e in edges
        ):
            raise MalformedBundleError("parent_edges must be a list of integers")
        if edges != sorted(set(edges)):
            raise MalformedBundleError("parent_edges must be strictly increasing")
        detail = obj["error_detail"]
        if detail is not None and not isinstance(detail, str):
            raise MalformedBundleError("error_detail must be a string or null")
        try:
            data = base64.b64decode(obj["data"], validate=True)
        except (binascii.Error, ValueError):
            raise MalformedBundleError("data is not valid base64") from None
        try:
            return cls(
                node_id=obj["node_id"],
                variable=MeasurementVariable.from_json(variable),
                asp_feature=obj["asp_feature"],
                media_type=obj["media_type"],
                data=data,
                parent_edges=frozenset(edges),
                error_detail=detail,
            )
        except ValueError as exc:
            raise MalformedBundleError(str(exc)) from None


def _require_fields(obj: object, fields: set[str], what: str) -> None:
    if not isinstance(obj, dict):
        raise MalformedBundleError(f"{what} must be a JSON object")
    if set(obj) != fields:
        missing = fields - set(obj)
        unknown = set(obj) - fields
        parts = []
        if missing:
            parts.append(f"missing {sorted(missing)}")
        if unknown:
            parts.append(f"unknown {sorted(unknown)}")
        raise MalformedBundleError(f"{what} fields: " + ", ".join(parts))


@dataclass(frozen=True)
class MeasurementGraph:
    nodes: tuple[EvidenceNode, ...]
    spec_uuid: str
    target_identity: str
    collection_time: str  # RFC 3339 UTC
    nonce: bytes  # 32 bytes, from the negotiation session

    def __post_init__(self):
        check_uuid(self.spec_uuid)
        if len(self.nonce) != 32:
            raise ValueError("nonce must be exactly 32 bytes")
        if not _RFC3339_RE.match(self.collection_time):
            raise ValueError(f"collection_time is not RFC 3339 UTC: {self.collection_time!r}")
        for i, node in enumerate(self.nodes):
            if node.node_id != i:
                raise ValueError(f"node ids must be dense from 0; position {i} holds {node.node_id}")

    def header_json(self) -> dict:
        return {
            "spec_uuid": self.spec_uuid,
            "target_identity": self.target_identity,
            "collection_time": self.collection_time,
            "nonce": self.nonce.hex(),
        }

    def to_json(self) -> dict:
        obj = self.header_json()
        obj["nodes"] = [node.to_json() for node in self.nodes]
        return obj

    @classmethod
    def from_json(cls, obj: object) -> "MeasurementGraph":
        _require_fields(
            obj,
            {"spec_uuid", "target_identity", "collection_time", "nonce", "nodes"},
            "measurement graph",
        )
        for key in ("spec_uuid", "target_identity", "collection_time", "nonce"):
            if not isinstance(obj[key], str):
                raise MalformedBundleError(f"{key} must be a string")
        if not isinstance(obj["nodes"], list):
            raise MalformedBundleError("nodes must be a list")
        try:
            nonce = bytes.fromhex(obj["nonce"])
        except ValueError:
            raise MalformedBundleError("nonce is not valid hex") from None
        try:
            return cls(
                nodes=tuple(EvidenceNode.from_json(n) for n in obj["nodes"]),
                spec_uuid=obj["spec_uuid"],
                target_identity=obj["target_identity"],
                collection_time=obj["collection_time"],
                nonce=nonce,
            )
        except Exception as exc:
            if isinstance(exc, MalformedBundleError):
                raise
            raise MalformedBundleError(str(exc)) from None

    # --- canonical byte forms (what signatures cover) ---------------------

    def serialize(self) -> bytes:
        """The canonical byte form of the whole graph."""
        return canonical.dumps(self.to_json())

    def header_bytes(self) -> bytes:
        """Canonical bytes of everything except the node list."""
        return canonical.dumps(self.header_json())

    def node_bytes(self, index: int) -> bytes:
        return canonical.dumps(self.nodes[index].to_json())


def deserialize_graph(data: bytes) -> MeasurementGraph:
    """Parse canonical graph bytes, insisting on canonical form.

    Rejecting non-canonical encodings means: if the bytes parse at all,
    re-serializing the parsed graph reproduces them exactly — so
    signatures verified against recomputed segments are verified against
    the bytes actually received.
    """
    try:
        obj = canonical.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedBundleError(f"graph bytes are not valid JSON: {exc}") from None
    graph = MeasurementGraph.from_json(obj)
    if graph.serialize() != data:
        raise MalformedBundleError("graph bytes are not in canonical form")
    return graph


def graph_from_eval(
    nodes: Sequence[EvalNode],
    spec_uuid: str,
    target_identity: str,
    nonce: bytes,
    collection_time: Optional[str] = None,
) -> MeasurementGraph:
    """Assemble evaluator output into a graph bound to a session."""
    return MeasurementGraph(
        nodes=tuple(
            EvidenceNode(
                node_id=n.node_id,
                variable=n.variable,
                asp_feature=n.asp_feature,
                media_type=n.media_type,
                data=n.data,
                parent_edges=n.parent_edges,
                error_detail=n.error_detail,
            )
            for n in nodes
        ),
        spec_uuid=spec_uuid,
        target_identity=target_identity,
        collection_time=collection_time or now_rfc3339(),
        nonce=nonce,
    )
