"""The generic dual-role APB executable.

Launched by an AM with the session context as its first stdin frame and
the peer channel inherited as an open socket fd. Writes exactly one
result frame to stdout and exits; any verdict — pass, fail, or error —
is a *successful* run of this program. Nonzero exit means the block
itself broke, and the parent AM degrades that into an error report
without dying.
"""

from __future__ import annotations

import base64
import json
import os
import socket
import sys
from pathlib import Path
from typing import Optional

from .. import canonical, framing
from ..errors import AspError, AttestKitError
from ..graph import MeasurementGraph, deserialize_graph, graph_from_eval
from ..mspec import MeasurementVariable, evaluate
from ..report import Finding, Report, Severity, error_report, synthesize
from ..baseline import MATCH, MISMATCH, UNKNOWN
from ..store import Store
from . import (
    ApbContext,
    ProcessExecutor,
    ROLE_APPRAISER,
    ROLE_ATTESTER,
)

_REQUEST_VTYPE = "request"


def _write_request(workspace: Path, name: str, body: dict) -> MeasurementVariable:
    (workspace / name).write_text(json.dumps(body))
    return MeasurementVariable(_REQUEST_VTYPE, name)


def run_attester(store: Store, ctx: ApbContext, channel) -> dict:
    registry = store.load_registry()
    apb_meta = registry.get(ctx.apb_uuid)
    workspace = Path(ctx.workspace)
    executor = ProcessExecutor(
        registry,
        apb_meta,
        workspace,
        categories=ctx.categories,
        timeout=ctx.asp_timeout,
        trace_dir=ctx.trace_dir,
        trace_file=ctx.trace_file,
    )
    spec = store.load_spec(ctx.spec_uuid)
    nodes = evaluate(spec, executor)
    graph = graph_from_eval(
        nodes, ctx.spec_uuid, ctx.target_identity, bytes.fromhex(ctx.nonce)
    )
    (workspace / "graph.json").write_bytes(graph.serialize())

    sign_request = _write_request(
        workspace,
        "sign_request.json",
        {
            "graph_file": "graph.json",
            "style": ctx.style,
            "key_path": str(store.identity_path),
        },
    )
    signed = executor.invoke("sign_bundle", sign_request)
    bundle_body = json.loads(signed.data)
    channel.send(bundle_body)
    return {
        "type": "apb-done",
        "ok": True,
        "bundle_blob": store.put_blob(signed.data),
        "node_count": len(graph.nodes),
    }


def _appraise_graph(
    graph: MeasurementGraph, ctx: ApbContext, executor: ProcessExecutor, workspace: Path
) -> list[Finding]:
    findings: list[Finding] = []
    if graph.nonce.hex() != ctx.nonce:
        findings.append(
            Finding(
                None,
                "nonce mismatch: evidence was not produced for this session, "
                "so freshness cannot be established — untrusted evidence",
                Severity.FAIL,
            )
        )
    if graph.target_identity != ctx.target_identity:
        findings.append(
            Finding(
                None,
                f"evidence names target {graph.target_identity!r}, "
                f"expected {ctx.target_identity!r}",
                Severity.FAIL,
            )
        )
    if findings:
        # identity or freshness already broke; grading content adds nothing
        return findings

    error_nodes = set()
    for node in graph.nodes:
        if node.error_detail is not None:
            error_nodes.add(node.node_id)
            findings.append(
                Finding(
                    node.node_id,
                    f"measurement error at {node.variable.address}: {node.error_detail}",
                    Severity.WARNING,
                )
            )

    compare_request = _write_request(
        workspace,
        "baseline_request.json",
        {
            "graph_file": "bundle_graph.json",
            "baseline_file": "baseline.jsonl",
        },
    )
    verdicts = json.loads(executor.invoke("baseline_compare", compare_request).data)
    for node in graph.nodes:
        verdict = verdicts.get(str(node.node_id))
        if verdict == MISMATCH:
            findings.append(
                Finding(
                    node.node_id,
                    f"digest of {node.variable.address} matches no baseline record",
                    Severity.FAIL,
                )
            )
        elif verdict == UNKNOWN and node.node_id not in error_nodes:
            if node.asp_feature != "success":
                findings.append(
                    Finding(
                        node.node_id,
                        f"no baseline record for {node.variable.address} (novel identity)",
                        Severity.WARNING,
                    )
                )
    return findings


def run_appraiser(store: Store, ctx: ApbContext, channel) -> dict:
    registry = store.load_registry()
    apb_meta = registry.get(ctx.apb_uuid)
    workspace = Path(ctx.workspace)
    executor = ProcessExecutor(
        registry,
        apb_meta,
        workspace,
        categories=ctx.categories,
        timeout=ctx.asp_timeout,
        trace_dir=ctx.trace_dir,
        trace_file=ctx.trace_file,
    )

    def finish(report: Report, bundle_bytes: Optional[bytes]) -> dict:
        report_bytes = report.serialize()
        result = {
            "type": "apb-report",
            "report": report.to_json(),
            "report_blob": store.put_blob(report_bytes),
        }
        if bundle_bytes is not None:
            result["bundle_blob"] = store.put_blob(bundle_bytes)
        return result

    try:
        body = channel.recv()
    except AttestKitError as exc:
        return finish(error_report(f"no evidence arrived: {exc}"), None)
    if not isinstance(body, dict) or body.get("type") != "bundle":
        kind = body.get("type") if isinstance(body, dict) else type(body).__name__
        return finish(
            error_report(f"expected an evidence bundle, got {kind!r}"), None
        )

    bundle_bytes = canonical.dumps(body)
    (workspace / "bundle.json").write_bytes(bundle_bytes)
    verify_request = _write_request(
        workspace,
        "verify_request.json",
        {"bundle_file": "bundle.json", "anchors_dir": str(store.anchors_dir)},
    )
    try:
        verdict_doc = json.loads(executor.invoke("verify_bundle", verify_request).data)
    except AspError as exc:
        return finish(error_report(f"signature verification failed to run: {exc}"), bundle_bytes)

    supporting = {"bundle_style": ctx.style, "spec_uuid": ctx.spec_uuid}
    if not verdict_doc.get("ok"):
        kind = verdict_doc.get("error_kind")
        detail = verdict_doc.get("error_detail") or "unspecified"
        if kind == "malformed":
            return finish(
                error_report(f"evidence bundle is malformed: {detail}"), bundle_bytes
            )
        index = verdict_doc.get("failed_index")
        text = {
            "bad-signature": f"evidence signature check failed ({detail}) — untrusted evidence",
            "unknown-signer": f"evidence signed by an unrecognized key ({detail}) — untrusted evidence",
        }.get(kind, f"evidence rejected: {detail}")
        report = synthesize([Finding(index, text, Severity.FAIL)], supporting)
        return finish(report, bundle_bytes)

    try:
        graph = deserialize_graph(base64.b64decode(body["graph"]))
    except Exception as exc:
        return finish(error_report(f"evidence bundle is malformed: {exc}"), bundle_bytes)

    (workspace / "bundle_graph.json").write_bytes(graph.serialize())
    baseline_copy = workspace / "baseline.jsonl"
    if store.baseline_path.is_file():
        baseline_copy.write_bytes(store.baseline_path.read_bytes())
    else:
        baseline_copy.write_bytes(b"")

    try:
        findings = _appraise_graph(graph, ctx, executor, workspace)
    except AspError as exc:
        return finish(error_report(f"baseline comparison failed to run: {exc}"), bundle_bytes)

    supporting["node_count"] = len(graph.nodes)
    return finish(synthesize(findings, supporting), bundle_bytes)


def main(argv=None) -> int:
    try:
        body = framing.read_stream_frame(sys.stdin.buffer)
        ctx = ApbContext.from_json(body)
    except AttestKitError as exc:
        print(f"apb: bad context frame: {exc}", file=sys.stderr)
        return 2

    try:
        sock = socket.socket(fileno=ctx.channel_fd)
    except OSError as exc:
        print(f"apb: cannot adopt channel fd {ctx.channel_fd}: {exc}", file=sys.stderr)
        return 2
    channel = framing.Channel(sock)
    store = Store(ctx.store_root)

    try:
        if ctx.role == ROLE_ATTESTER:
            result = run_attester(store, ctx, channel)
        else:
            result = run_appraiser(store, ctx, channel)
    except AttestKitError as exc:
        if ctx.role == ROLE_APPRAISER:
            report = error_report(f"appraisal block failed: {exc}")
            result = {
                "type": "apb-report",
                "report": report.to_json(),
                "report_blob": store.put_blob(report.serialize()),
            }
        else:
            result = {"type": "apb-done", "ok": False, "error": str(exc)}
    finally:
        channel.close()

    sys.stdout.buffer.write(framing.encode_frame(result))
    sys.stdout.buffer.flush()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
