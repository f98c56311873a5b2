"""Evidence bundles: a serialized measurement graph plus signatures.

Three styles trade signing cost against tamper localization:

* ``aggregate`` — one signature over the whole canonical serialization.
  Cheapest; a failure says only "something changed".
* ``per-item`` — one signature per node, each covering the graph header
  concatenated with that node's canonical bytes. A failure localizes to
  the modified node (a header change breaks every record).
* ``chained`` — one signature per node; signature *i* covers
  header ‖ node_i ‖ digest of the previous signed record, where the
  digest chain is seeded with sha256(session nonce). A failure
  localizes to the earliest affected link, and truncation or reordering
  breaks the chain.

Every style covers every byte of the serialized graph: the header
(spec uuid, target identity, collection time, nonce) is part of the
covered bytes in all three, which is what makes single-byte tamper
detection exhaustive rather than best-effort.

Counts: a graph of n nodes yields 1 signature when aggregate and n
signatures otherwise, so a single-node graph yields exactly 1 in every
style.
"""

from __future__ import annotations

import base64
import binascii
import enum
import hashlib
from dataclasses import dataclass
from typing import Optional

from . import canonical, keys
from .errors import BadSignatureError, MalformedBundleError, UnknownSignerError
from .graph import MeasurementGraph, deserialize_graph

CHAIN_HASH = hashlib.sha256


class BundleStyle(str, enum.Enum):
    AGGREGATE = "aggregate"
    PER_ITEM = "per-item"
    CHAINED = "chained"


@dataclass(frozen=True)
class SignatureRecord:
    """(covered-range descriptor, signature bytes, signer key id)."""

    covers: str  # "aggregate" | "node:<i>" | "chain:<i>"
    signature: bytes
    key_id: str

    def to_json(self) -> dict:
        return {
            "covers": self.covers,
            "signature": base64.b64encode(self.signature).decode("ascii"),
            "key_id": self.key_id,
        }

    @classmethod
    def from_json(cls, obj: object) -> "SignatureRecord":
        if not isinstance(obj, dict) or set(obj) != {"covers", "signature", "key_id"}:
            raise MalformedBundleError("signature record must be {covers, signature, key_id}")
        if not all(isinstance(obj[k], str) for k in ("covers", "signature", "key_id")):
            raise MalformedBundleError("signature record fields must be strings")
        try:
            signature = base64.b64decode(obj["signature"], validate=True)
        except (binascii.Error, ValueError):
            raise MalformedBundleError("signature is not valid base64") from None
        return cls(covers=obj["covers"], signature=signature, key_id=obj["key_id"])


@dataclass(frozen=True)
class EvidenceBundle:
    graph_bytes: bytes  # canonical serialization of the MeasurementGraph
    style: BundleStyle
    signatures: tuple[SignatureRecord, ...]

    def to_json(self) -> dict:
        return {
            "type": "bundle",
            "graph": base64.b64encode(self.graph_bytes).decode("ascii"),
            "style": self.style.value,
            "signatures": [s.to_json() for s in self.signatures],
        }

    @classmethod
    def from_json(cls, obj: object) -> "EvidenceBundle":
        if not isinstance(obj, dict):
            raise MalformedBundleError("bundle must be a JSON object")
        if set(obj) != {"type", "graph", "style", "signatures"}:
            raise MalformedBundleError("bundle fields must be {type, graph, style, signatures}")
        if obj.get("type") != "bundle":
            raise MalformedBundleError("not a bundle body")
        try:
            style = BundleStyle(obj["style"])
        except (ValueError, TypeError):
            raise MalformedBundleError(f"unknown bundle style {obj.get('style')!r}") from None
        if not isinstance(obj["graph"], str):
            raise MalformedBundleError("graph must be a base64 string")
        try:
            graph_bytes = base64.b64decode(obj["graph"], validate=True)
        except (binascii.Error, ValueError):
            raise MalformedBundleError("graph is not valid base64") from None
        if not isinstance(obj["signatures"], list):
            raise MalformedBundleError("signatures must be a list")
        return cls(
            graph_bytes=graph_bytes,
            style=style,
            signatures=tuple(SignatureRecord.from_json(s) for s in obj["signatures"]),
        )


def _chain_seed(graph: MeasurementGraph) -> bytes:
    return CHAIN_HASH(graph.nonce).digest()


def _covered_bytes(graph: MeasurementGraph, style: BundleStyle, index: int,
                   prev_digest: Optional[bytes]) -> bytes:
    header = graph.header_bytes()
    if style is BundleStyle.AGGREGATE:
        return graph.serialize()
    if style is BundleStyle.PER_ITEM:
        return header + graph.node_bytes(index)
    if style is BundleStyle.CHAINED:
        assert prev_digest is not None
        return header + graph.node_bytes(index) + prev_digest
    raise TypeError(f"unknown style {style!r}")


def bundle(graph: MeasurementGraph, style: BundleStyle, private_key, key_id: str) -> EvidenceBundle:
    """Sign ``graph`` in the requested style."""
    signatures: list[SignatureRecord] = []
    if style is BundleStyle.AGGREGATE:
        covered = _covered_bytes(graph, style, 0, None)
        signatures.append(
            SignatureRecord("aggregate", keys.sign_digest(private_key, covered), key_id)
        )
    elif style is BundleStyle.PER_ITEM:
        for i in range(len(graph.nodes)):
            covered = _covered_bytes(graph, style, i, None)
            signatures.append(
                SignatureRecord(f"node:{i}", keys.sign_digest(private_key, covered), key_id)
            )
    elif style is BundleStyle.CHAINED:
        prev_digest = _chain_seed(graph)
        for i in range(len(graph.nodes)):
            covered = _covered_bytes(graph, style, i, prev_digest)
            signature = keys.sign_digest(private_key, covered)
            signatures.append(SignatureRecord(f"chain:{i}", signature, key_id))
            prev_digest = CHAIN_HASH(graph.node_bytes(i) + signature).digest()
    else:
        raise TypeError(f"unknown style {style!r}")
    return EvidenceBundle(
        graph_bytes=graph.serialize(), style=style, signatures=tuple(signatures)
    )


@dataclass(frozen=True)
class SignatureCheck:
    covers: str
    key_id: str
    valid: bool


def signature_report(
    bundle_value: EvidenceBundle, anchors: keys.TrustAnchors
) -> tuple[MeasurementGraph, list[SignatureCheck]]:
    """Check every signature individually (the localization view).

    Raises MalformedBundleError / UnknownSignerError for structural
    problems; individual signature validity lands in the report so
    callers can see *which* records broke.
    """
    graph = deserialize_graph(bundle_value.graph_bytes)
    n = len(graph.nodes)
    style = bundle_value.style
    records = bundle_value.signatures

    if style is BundleStyle.AGGREGATE:
        expected_covers = ["aggregate"]
    elif style is BundleStyle.PER_ITEM:
        expected_covers = [f"node:{i}" for i in range(n)]
    else:
        expected_covers = [f"chain:{i}" for i in range(n)]
    if [r.covers for r in records] != expected_covers:
        raise MalformedBundleError(
            f"{style.value} bundle over {n} nodes must carry signatures "
            f"{expected_covers}, found {[r.covers for r in records]}"
        )

    checks: list[SignatureCheck] = []
    prev_digest = _chain_seed(graph) if style is BundleStyle.CHAINED else None
    for i, record in enumerate(records):
        public = anchors.resolve(record.key_id)  # raises UnknownSignerError
        covered = _covered_bytes(graph, style, i, prev_digest)
        valid = keys.verify_digest(public, record.signature, covered)
        checks.append(SignatureCheck(record.covers, record.key_id, valid))
        if style is BundleStyle.CHAINED:
            prev_digest = CHAIN_HASH(graph.node_bytes(i) + record.signature).digest()
    return graph, checks


def verify_bundle(
    bundle_value: EvidenceBundle, anchors: keys.TrustAnchors
) -> MeasurementGraph:
    """Verify all signatures and return the deserialized graph.

    Raises:
        MalformedBundleError: bad serialization, non-canonical graph
            bytes, or a signature set that does not match the style.
        UnknownSignerError: a key id with no trust anchor.
        BadSignatureError: a failed signature; ``index`` is the node
            index (per-item), the earliest broken link (chained), or 0
            (aggregate).
    """
    graph, checks = signature_report(bundle_value, anchors)
    for index, check in enumerate(checks):
        if not check.valid:
            raise BadSignatureError(index, f"record covering {check.covers}")
    return graph
