"""Evidence graphs, signing styles, and tamper behavior."""

import base64
import hashlib
import json

import pytest

from attestkit import canonical
from attestkit.bundle import (
    BundleStyle,
    EvidenceBundle,
    bundle,
    signature_report,
    verify_bundle,
)
from attestkit.errors import (
    BadSignatureError,
    MalformedBundleError,
    UnknownSignerError,
)
from attestkit.graph import (
    EvidenceNode,
    MeasurementGraph,
    deserialize_graph,
    graph_from_eval,
)
from attestkit.keys import (
    TrustAnchors,
    generate_identity,
    key_id_of,
    load_private,
    load_public,
    public_path,
    sign_digest,
    verify_digest,
)
from attestkit.mspec import MeasurementVariable

SPEC_UUID = "12345678-0000-4000-8000-00000000abcd"
NONCE = bytes(range(32))
WHEN = "2026-08-22T12:00:00Z"


def make_graph(n_nodes=3):
    nodes = []
    for i in range(n_nodes):
        parents = frozenset([i - 1]) if i else frozenset()
        nodes.append(
            EvidenceNode(
                node_id=i,
                variable=MeasurementVariable("path", f"/f{i}"),
                asp_feature="sha1sum",
                media_type="application/x.sha1-digest",
                data=bytes([i]) * 20,
                parent_edges=parents,
            )
        )
    return MeasurementGraph(
        spec_uuid=SPEC_UUID,
        target_identity="host-a",
        collection_time=WHEN,
        nonce=NONCE,
        nodes=tuple(nodes),
    )


@pytest.fixture(scope="module")
def identity(tmp_path_factory):
    keydir = tmp_path_factory.mktemp("keys")
    pem = keydir / "identity.pem"
    key_id = generate_identity(pem)
    anchors_dir = tmp_path_factory.mktemp("anchors")
    (anchors_dir / "host-a.pem").write_bytes(public_path(pem).read_bytes())
    return {
        "private": load_private(pem),
        "key_id": key_id,
        "anchors": TrustAnchors(anchors_dir),
    }


class TestKeys:
    def test_key_id_is_stable_and_16_hex_bytes(self, tmp_path):
        pem = tmp_path / "id.pem"
        key_id = generate_identity(pem)
        assert len(key_id) == 32 and int(key_id, 16) >= 0
        assert key_id_of(load_public(public_path(pem))) == key_id

    def test_sign_verify_round_trip(self, tmp_path):
        pem = tmp_path / "id.pem"
        generate_identity(pem)
        private = load_private(pem)
        public = load_public(public_path(pem))
        sig = sign_digest(private, b"payload")
        assert verify_digest(public, sig, b"payload")
        assert not verify_digest(public, sig, b"payloae")
        assert not verify_digest(public, b"\x00" * 64, b"payload")

    def test_private_key_file_not_world_readable(self, tmp_path):
        pem = tmp_path / "id.pem"
        generate_identity(pem)
        assert (pem.stat().st_mode & 0o077) == 0

    def test_anchor_resolution(self, identity):
        anchors = identity["anchors"]
        assert anchors.name_of(identity["key_id"]) == "host-a"
        with pytest.raises(UnknownSignerError):
            anchors.resolve("00" * 16)


class TestGraphSerialization:
    def test_round_trip(self):
        graph = make_graph()
        assert deserialize_graph(graph.serialize()) == graph

    def test_non_canonical_payload_rejected(self):
        graph = make_graph(1)
        pretty = json.dumps(json.loads(graph.serialize()), indent=2).encode()
        with pytest.raises(MalformedBundleError, match="canonical"):
            deserialize_graph(pretty)

    def test_unknown_and_missing_fields_rejected(self):
        graph = make_graph(1)
        doc = json.loads(graph.serialize())
        extra = dict(doc, surprise=1)
        with pytest.raises(MalformedBundleError):
            deserialize_graph(canonical.dumps(extra))
        missing = {k: v for k, v in doc.items() if k != "nonce"}
        with pytest.raises(MalformedBundleError):
            deserialize_graph(canonical.dumps(missing))

    def test_parent_edges_must_point_backwards(self):
        with pytest.raises(ValueError, match="backwards"):
            EvidenceNode(
                node_id=0,
                variable=MeasurementVariable("path", "/x"),
                asp_feature="success",
                media_type="",
                data=b"",
                parent_edges=frozenset([0]),
            )
        doc = json.loads(make_graph(2).serialize())
        doc["nodes"][0]["parent_edges"] = [1]
        with pytest.raises(MalformedBundleError):
            deserialize_graph(canonical.dumps(doc))

    def test_node_ids_must_be_dense(self):
        node = EvidenceNode(
            node_id=1,
            variable=MeasurementVariable("path", "/x"),
            asp_feature="success",
            media_type="",
            data=b"",
            parent_edges=frozenset(),
        )
        with pytest.raises(ValueError, match="dense"):
            MeasurementGraph(
                spec_uuid=SPEC_UUID,
                target_identity="h",
                collection_time=WHEN,
                nonce=NONCE,
                nodes=(node,),
            )

    def test_nonce_must_be_32_bytes(self):
        with pytest.raises(ValueError, match="32 bytes"):
            MeasurementGraph(
                spec_uuid=SPEC_UUID,
                target_identity="h",
                collection_time=WHEN,
                nonce=b"short",
                nodes=(),
            )

    def test_graph_from_eval_preserves_order_and_edges(self):
        from attestkit.mspec import EvalNode

        eval_nodes = [
            EvalNode(
                node_id=0,
                variable=MeasurementVariable("path", "/d"),
                asp_feature="dirlist",
                media_type="text/plain; charset=utf-8",
                data=b"f",
                parent_edges=frozenset(),
                error_detail=None,
            ),
            EvalNode(
                node_id=1,
                variable=MeasurementVariable("path", "/d/f"),
                asp_feature="sha1sum",
                media_type="application/x.sha1-digest",
                data=b"\x00" * 20,
                parent_edges=frozenset([0]),
                error_detail=None,
            ),
        ]
        graph = graph_from_eval(eval_nodes, SPEC_UUID, "host-a", NONCE, WHEN)
        assert graph.nodes[1].parent_edges == frozenset([0])
        assert deserialize_graph(graph.serialize()) == graph


class TestBundleStyles:
    @pytest.mark.parametrize(
        "style,expected_count",
        [
            (BundleStyle.AGGREGATE, 1),
            (BundleStyle.PER_ITEM, 4),
            (BundleStyle.CHAINED, 4),
        ],
    )
    def test_signature_count_for_four_nodes(self, identity, style, expected_count):
        sealed = bundle(make_graph(4), style, identity["private"], identity["key_id"])
        assert len(sealed.signatures) == expected_count

    @pytest.mark.parametrize("style", list(BundleStyle))
    def test_single_node_graph_has_exactly_one_signature(self, identity, style):
        sealed = bundle(make_graph(1), style, identity["private"], identity["key_id"])
        assert len(sealed.signatures) == 1

    @pytest.mark.parametrize("style", list(BundleStyle))
    def test_verify_round_trip(self, identity, style):
        graph = make_graph(3)
        sealed = bundle(graph, style, identity["private"], identity["key_id"])
        assert verify_bundle(sealed, identity["anchors"]) == graph

    @pytest.mark.parametrize("style", list(BundleStyle))
    def test_bundle_json_round_trip(self, identity, style):
        sealed = bundle(make_graph(2), style, identity["private"], identity["key_id"])
        again = EvidenceBundle.from_json(json.loads(canonical.dumps(sealed.to_json())))
        assert again == sealed
        assert verify_bundle(again, identity["anchors"])

    def test_unknown_signer_rejected(self, identity, tmp_path):
        stranger_pem = tmp_path / "stranger.pem"
        stranger_id = generate_identity(stranger_pem)
        sealed = bundle(
            make_graph(2), BundleStyle.AGGREGATE, load_private(stranger_pem), stranger_id
        )
        with pytest.raises(UnknownSignerError):
            verify_bundle(sealed, identity["anchors"])

    def test_chained_seed_depends_on_nonce(self, identity):
        """Same node bytes, different nonce: every chained signature differs."""
        g1 = make_graph(2)
        g2 = MeasurementGraph(
            spec_uuid=g1.spec_uuid,
            target_identity=g1.target_identity,
            collection_time=g1.collection_time,
            nonce=bytes(reversed(NONCE)),
            nodes=g1.nodes,
        )
        s1 = bundle(g1, BundleStyle.CHAINED, identity["private"], identity["key_id"])
        s2 = bundle(g2, BundleStyle.CHAINED, identity["private"], identity["key_id"])
        assert all(
            a.signature != b.signature for a, b in zip(s1.signatures, s2.signatures)
        )

    def test_per_item_signatures_do_not_chain(self, identity):
        """Reordering two per-item signatures swaps which node each covers,
        but each remains individually valid over its own node."""
        graph = make_graph(2)
        sealed = bundle(graph, BundleStyle.PER_ITEM, identity["private"], identity["key_id"])
        _, checks = signature_report(sealed, identity["anchors"])
        assert [c.valid for c in checks] == [True, True]


def mutate_byte(data: bytes, index: int) -> bytes:
    return data[:index] + bytes([data[index] ^ 0x01]) + data[index + 1:]


class TestTampering:
    @pytest.mark.parametrize("style", list(BundleStyle))
    def test_every_single_byte_flip_is_detected(self, identity, style):
        graph = make_graph(2)
        sealed = bundle(graph, style, identity["private"], identity["key_id"])
        payload = sealed.graph_bytes
        for i in range(len(payload)):
            tampered = EvidenceBundle(
                graph_bytes=mutate_byte(payload, i),
                style=sealed.style,
                signatures=sealed.signatures,
            )
            with pytest.raises((MalformedBundleError, BadSignatureError)):
                verify_bundle(tampered, identity["anchors"])

    def test_tampered_node_is_localized_in_per_item_style(self, identity):
        graph = make_graph(4)
        sealed = bundle(graph, BundleStyle.PER_ITEM, identity["private"], identity["key_id"])
        doc = json.loads(sealed.graph_bytes)
        doc["nodes"][2]["data"] = base64.b64encode(b"\xff" * 20).decode("ascii")
        tampered = EvidenceBundle(
            graph_bytes=canonical.dumps(doc),
            style=sealed.style,
            signatures=sealed.signatures,
        )
        _, checks = signature_report(tampered, identity["anchors"])
        assert [c.valid for c in checks] == [True, True, False, True]
        assert checks[2].covers == "node:2"

    def test_chained_tamper_invalidates_node_and_next_link(self, identity):
        """Each chained signature binds its own node plus the previous
        node's bytes-and-signature, so mutating node 1 breaks checks 1
        (its own coverage) and 2 (whose link digest covers node 1's
        bytes); later links cover only unchanged material."""
        graph = make_graph(4)
        sealed = bundle(graph, BundleStyle.CHAINED, identity["private"], identity["key_id"])
        doc = json.loads(sealed.graph_bytes)
        doc["nodes"][1]["data"] = base64.b64encode(b"\xff" * 20).decode("ascii")
        tampered = EvidenceBundle(
            graph_bytes=canonical.dumps(doc),
            style=sealed.style,
            signatures=sealed.signatures,
        )
        _, checks = signature_report(tampered, identity["anchors"])
        assert [c.valid for c in checks] == [True, False, False, True]
        # localization: first failing index is the tampered node
        with pytest.raises(BadSignatureError) as excinfo:
            verify_bundle(tampered, identity["anchors"])
        assert excinfo.value.index == 1

    def test_dropped_signature_is_malformed(self, identity):
        sealed = bundle(make_graph(3), BundleStyle.PER_ITEM,
                        identity["private"], identity["key_id"])
        short = EvidenceBundle(
            graph_bytes=sealed.graph_bytes,
            style=sealed.style,
            signatures=sealed.signatures[:-1],
        )
        with pytest.raises(MalformedBundleError, match="signature"):
            verify_bundle(short, identity["anchors"])

    def test_swapped_signature_records_detected(self, identity):
        sealed = bundle(make_graph(3), BundleStyle.CHAINED,
                        identity["private"], identity["key_id"])
        swapped = EvidenceBundle(
            graph_bytes=sealed.graph_bytes,
            style=sealed.style,
            signatures=(sealed.signatures[1], sealed.signatures[0])
            + sealed.signatures[2:],
        )
        with pytest.raises((MalformedBundleError, BadSignatureError)):
            verify_bundle(swapped, identity["anchors"])

    def test_style_relabeling_detected(self, identity):
        """Claiming an aggregate bundle is per-item must not verify."""
        sealed = bundle(make_graph(1), BundleStyle.AGGREGATE,
                        identity["private"], identity["key_id"])
        relabeled = EvidenceBundle(
            graph_bytes=sealed.graph_bytes,
            style=BundleStyle.PER_ITEM,
            signatures=sealed.signatures,
        )
        with pytest.raises((MalformedBundleError, BadSignatureError)):
            verify_bundle(relabeled, identity["anchors"])

    def test_bad_signature_error_names_first_failing_index(self, identity):
        graph = make_graph(3)
        sealed = bundle(graph, BundleStyle.PER_ITEM, identity["private"], identity["key_id"])
        doc = json.loads(sealed.graph_bytes)
        doc["nodes"][1]["data"] = base64.b64encode(b"\x55" * 20).decode("ascii")
        tampered = EvidenceBundle(
            graph_bytes=canonical.dumps(doc),
            style=sealed.style,
            signatures=sealed.signatures,
        )
        with pytest.raises(BadSignatureError) as excinfo:
            verify_bundle(tampered, identity["anchors"])
        assert excinfo.value.index == 1
