"""The dual-role bundle executable, driven as real child processes.

These tests do what the daemon does after agreement: hand each child
one end of a connected socket pair plus a context frame on stdin, and
read a single result frame from stdout. No manager is involved, so
every behavior here is the child's own.
"""

import io
import os
import socket
import subprocess
import uuid as uuid_mod

import pytest

from attestkit import baseline, framing, mspec
from attestkit.apb import ROLE_APPRAISER, ROLE_ATTESTER, ApbContext
from attestkit.asps.local import LocalExecutor
from attestkit.graph import graph_from_eval
from attestkit.negotiation import fresh_nonce, fresh_session_id
from attestkit.report import Report, Severity, Verdict
from attestkit.store import Store, builtin_apb_uuid, install_builtins

SPEC_UUID = str(uuid_mod.uuid5(uuid_mod.NAMESPACE_URL, "urn:x-test:spec:apb-tree"))
SOLO_SPEC_UUID = str(uuid_mod.uuid5(uuid_mod.NAMESPACE_URL, "urn:x-test:spec:apb-solo"))


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    """One store, a small measured tree, and a matching baseline.

    A second spec measures a standalone file that is deliberately left
    out of the baseline, so its digest is a novel identity.
    """
    base = tmp_path_factory.mktemp("apb")
    tree = base / "tree"
    (tree / "deep").mkdir(parents=True)
    (tree / "one.cfg").write_text("alpha = 1\n")
    (tree / "deep" / "two.cfg").write_text("beta = 2\n")
    solo = base / "solo.cfg"
    solo.write_text("gamma = 3\n")

    spec_text = (
        "scan p :: path\n"
        "  | is_reg p = sha256sum p\n"
        "  | is_dir p = dirlist p >>= scan\n"
        "  otherwise = success\n"
        f'do scan ("{tree}" :: path)\n'
    )
    solo_text = (
        "solo p :: path\n"
        "  | is_reg p = sha256sum p\n"
        "  otherwise = success\n"
        f'do solo ("{solo}" :: path)\n'
    )
    store = Store(base / "store")
    store.init()
    install_builtins(store, readable_roots=(str(tree), str(solo)),
                     with_system_specs=False)
    store.add_spec("tree-scan", spec_text, uuid=SPEC_UUID)
    store.add_spec("solo-scan", solo_text, uuid=SOLO_SPEC_UUID)
    store.add_anchor("this-host", store.public_identity_pem())

    spec = store.load_spec(SPEC_UUID)
    nodes = mspec.evaluate(spec, LocalExecutor(base))
    graph = graph_from_eval(nodes, SPEC_UUID, "this-host", b"\x11" * 32)
    baseline.append_records(store.baseline_path, baseline.records_from_graph(graph))
    return {"store": store, "tree": tree, "solo": solo}


def _spawn(store, ctx):
    meta = store.load_registry().get(ctx.apb_uuid)
    os.set_inheritable(ctx.channel_fd, True)
    return subprocess.Popen(
        [meta.executable],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        pass_fds=(ctx.channel_fd,),
        cwd=ctx.workspace,
    )


def _context(store, role, fd, session, nonce, *, style="chained",
             target="this-host", spec_uuid=SPEC_UUID):
    workspace = store.new_workspace(f"{session}-{role}")
    return ApbContext(
        role=role,
        store_root=str(store.root),
        workspace=str(workspace),
        session_id=session,
        nonce=nonce,
        apb_uuid=builtin_apb_uuid(style),
        spec_uuid=spec_uuid,
        style=style,
        channel_fd=fd,
        target_identity=target,
        peer_name="peer",
        categories=(1,),
        asp_timeout=30.0,
    )


def _result(proc, ctx, timeout=60.0):
    out, err = proc.communicate(framing.encode_frame(ctx.to_json()), timeout=timeout)
    assert proc.returncode == 0, err.decode()
    return framing.read_stream_frame(io.BytesIO(out))


def run_pair(store, *, att_nonce=None, app_nonce=None, att_target=None, app_target=None,
             style="chained", spec_uuid=SPEC_UUID):
    session = fresh_session_id()
    nonce = fresh_nonce()
    left, right = socket.socketpair()
    att_ctx = _context(store, ROLE_ATTESTER, left.fileno(), session,
                       att_nonce or nonce, style=style,
                       target=att_target or "this-host", spec_uuid=spec_uuid)
    app_ctx = _context(store, ROLE_APPRAISER, right.fileno(), session,
                       app_nonce or nonce, style=style,
                       target=app_target or "this-host", spec_uuid=spec_uuid)
    att = _spawn(store, att_ctx)
    app = _spawn(store, app_ctx)
    left.close()
    right.close()
    att_result = _result(att, att_ctx)
    app_result = _result(app, app_ctx)
    return att_result, app_result


class TestPair:
    def test_clean_run_passes(self, world):
        att, app = run_pair(world["store"])
        assert att["type"] == "apb-done" and att["ok"]
        assert att["node_count"] == 4
        assert app["type"] == "apb-report"
        report = Report.from_json(app["report"])
        assert report.verdict is Verdict.PASS
        assert report.supporting["bundle_style"] == "chained"
        assert report.supporting["node_count"] == 4

    def test_blobs_are_retrievable(self, world):
        store = world["store"]
        att, app = run_pair(store)
        bundle = store.get_blob(att["bundle_blob"])
        assert b'"signatures"' in bundle or b"signatures" in bundle
        report_bytes = store.get_blob(app["report_blob"])
        assert Report.from_json(
            __import__("json").loads(report_bytes)
        ).verdict is Verdict.PASS
        # both sides banked the identical bundle
        assert att["bundle_blob"] == app["bundle_blob"]

    @pytest.mark.parametrize("style", ["aggregate", "per-item"])
    def test_other_styles(self, world, style):
        _, app = run_pair(world["store"], style=style)
        report = Report.from_json(app["report"])
        assert report.verdict is Verdict.PASS
        assert report.supporting["bundle_style"] == style

    def test_nonce_mismatch_fails_freshness(self, world):
        _, app = run_pair(world["store"], app_nonce=fresh_nonce())
        report = Report.from_json(app["report"])
        assert report.verdict is Verdict.FAIL
        assert any("freshness" in f.text or "nonce" in f.text for f in report.findings)

    def test_target_mismatch_fails(self, world):
        _, app = run_pair(world["store"], app_target="someone-else")
        report = Report.from_json(app["report"])
        assert report.verdict is Verdict.FAIL

    def test_unbaselined_identity_is_a_warning_not_a_failure(self, world):
        _, app = run_pair(world["store"], spec_uuid=SOLO_SPEC_UUID)
        report = Report.from_json(app["report"])
        assert report.verdict is Verdict.PASS
        warnings = [f for f in report.findings if f.severity is Severity.WARNING]
        assert any("novel" in f.text for f in warnings)
        assert str(world["solo"]) in " ".join(f.text for f in warnings)

    def test_added_file_changes_the_parent_listing(self, world):
        # a new file under a measured directory is not merely "novel":
        # it breaks the parent's recorded listing digest
        extra = world["tree"] / "deep" / "three.cfg"
        extra.write_text("delta = 4\n")
        try:
            _, app = run_pair(world["store"])
        finally:
            extra.unlink()
        report = Report.from_json(app["report"])
        assert report.verdict is Verdict.FAIL
        assert any(str(world["tree"] / "deep") in f.text for f in report.findings
                   if f.severity is Severity.FAIL)

    def test_modified_file_fails_naming_the_path(self, world):
        victim = world["tree"] / "one.cfg"
        victim.write_text("alpha = 666\n")
        try:
            _, app = run_pair(world["store"])
        finally:
            victim.write_text("alpha = 1\n")
        report = Report.from_json(app["report"])
        assert report.verdict is Verdict.FAIL
        assert any(str(victim) in f.text for f in report.findings
                   if f.severity is Severity.FAIL)


class TestChildAlone:
    def test_appraiser_with_silent_peer_reports_error(self, world):
        store = world["store"]
        left, right = socket.socketpair()
        ctx = _context(store, ROLE_APPRAISER, right.fileno(),
                       fresh_session_id(), fresh_nonce())
        proc = _spawn(store, ctx)
        right.close()
        left.close()  # peer vanishes immediately
        result = _result(proc, ctx)
        report = Report.from_json(result["report"])
        assert report.verdict is Verdict.ERROR

    def test_attester_with_unknown_spec_fails_cleanly(self, world):
        store = world["store"]
        left, right = socket.socketpair()
        ctx = _context(store, ROLE_ATTESTER, left.fileno(),
                       fresh_session_id(), fresh_nonce(),
                       spec_uuid=str(uuid_mod.uuid4()))
        proc = _spawn(store, ctx)
        left.close()
        right.close()
        result = _result(proc, ctx)
        assert result["type"] == "apb-done"
        assert result["ok"] is False

    def test_garbage_context_exits_2(self, world):
        meta = world["store"].load_registry().get(builtin_apb_uuid("chained"))
        proc = subprocess.Popen(
            [meta.executable],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
        )
        out, err = proc.communicate(framing.encode_frame({"type": "nonsense"}),
                                    timeout=30)
        assert proc.returncode == 2
        assert b"context" in err
