"""The builtin service providers.

Each provider is one function: (variable, workspace) -> (evidence,
media type, produced variables). They are shared between the child
executables (via the runner) and the in-process LocalExecutor, so both
paths measure identically by construction.

Filesystem providers never follow symlinks: a link is reported, not
traversed, and hashing one is a functional error rather than a read of
whatever it points at.

``tpm_quote`` is a clearly labeled stub — there is no TPM in scope, so
it returns simulated evidence that says exactly that.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import socket as socket_mod
from pathlib import Path
from typing import Callable

from .. import canonical
from ..mspec import AspOutcome, MeasurementVariable

_READ_CHUNK = 65536

MEDIA_SHA1 = "application/x.sha1-digest"
MEDIA_SHA256 = "application/x.sha256-digest"
MEDIA_LISTING = "text/plain; charset=utf-8"
MEDIA_JSON = "application/json"


class FunctionalError(Exception):
    """An expected provider failure (unreadable target, bad request)."""


def _hash_file(path: str, algorithm: str) -> bytes:
    if os.path.islink(path):
        raise FunctionalError(f"refusing to follow symlink {path}")
    if not os.path.isfile(path):
        raise FunctionalError(f"not a regular file: {path}")
    digest = hashlib.new(algorithm)
    try:
        with open(path, "rb") as handle:
            while chunk := handle.read(_READ_CHUNK):
                digest.update(chunk)
    except OSError as exc:
        raise FunctionalError(f"cannot read {path}: {exc}") from None
    return digest.digest()


def sha1sum(variable: MeasurementVariable, workspace: Path) -> AspOutcome:
    return AspOutcome(data=_hash_file(variable.address, "sha1"), media_type=MEDIA_SHA1)


def sha256sum(variable: MeasurementVariable, workspace: Path) -> AspOutcome:
    return AspOutcome(data=_hash_file(variable.address, "sha256"), media_type=MEDIA_SHA256)


def dirlist(variable: MeasurementVariable, workspace: Path) -> AspOutcome:
    """List a directory; emit one produced ``path`` variable per entry.

    Entries are sorted lexicographically so listings (and therefore the
    discharge order of everything downstream) are deterministic.
    """
    path = variable.address
    if os.path.islink(path):
        raise FunctionalError(f"refusing to follow symlink {path}")
    if not os.path.isdir(path):
        raise FunctionalError(f"not a directory: {path}")
    try:
        names = sorted(os.listdir(path))
    except OSError as exc:
        raise FunctionalError(f"cannot list {path}: {exc}") from None
    produced = tuple(
        MeasurementVariable("path", os.path.join(path, name)) for name in names
    )
    listing = "\n".join(names).encode("utf-8")
    return AspOutcome(data=listing, media_type=MEDIA_LISTING, produced=produced)


def passwd_users(variable: MeasurementVariable, workspace: Path) -> AspOutcome:
    """User names: field 1 of each line of a passwd-format file."""
    path = variable.address
    if os.path.islink(path):
        raise FunctionalError(f"refusing to follow symlink {path}")
    try:
        text = Path(path).read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise FunctionalError(f"cannot read {path}: {exc}") from None
    users = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        users.append(line.split(":", 1)[0])
    return AspOutcome(data="\n".join(users).encode("utf-8"), media_type=MEDIA_LISTING)


def sysinfo(variable: MeasurementVariable, workspace: Path) -> AspOutcome:
    info = {
        "hostname": socket_mod.gethostname(),
        "system": platform.system(),
        "release": platform.release(),
        "machine": platform.machine(),
        "python": platform.python_version(),
    }
    return AspOutcome(data=canonical.dumps(info), media_type=MEDIA_JSON)


def tpm_quote(variable: MeasurementVariable, workspace: Path) -> AspOutcome:
    """STUB: simulated quote only; no TPM hardware is driven here."""
    fake = {
        "simulated": True,
        "note": "stub evidence: no TPM present, quote is NOT hardware-backed",
        "address": variable.address,
    }
    return AspOutcome(data=canonical.dumps(fake), media_type=MEDIA_JSON)


def _load_request(variable: MeasurementVariable, workspace: Path) -> dict:
    """Helper-provider convention: the variable names a JSON request
    file inside the workspace."""
    path = workspace / variable.address
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise FunctionalError(f"cannot read request file {variable.address}: {exc}") from None
    if not isinstance(obj, dict):
        raise FunctionalError("request file must hold a JSON object")
    return obj


def sign_bundle(variable: MeasurementVariable, workspace: Path) -> AspOutcome:
    """Bundle and sign a graph: request {graph_file, style, key_path}.

    Keeping signing in its own child keeps private-key access inside
    one narrowly-privileged process; the APB never loads the key.
    """
    from .. import bundle as bundle_mod
    from .. import keys
    from ..graph import deserialize_graph

    request = _load_request(variable, workspace)
    for required in ("graph_file", "style", "key_path"):
        if required not in request:
            raise FunctionalError(f"sign_bundle request is missing {required!r}")
    try:
        style = bundle_mod.BundleStyle(request["style"])
    except ValueError:
        raise FunctionalError(f"unknown bundle style {request['style']!r}") from None
    try:
        graph = deserialize_graph((workspace / request["graph_file"]).read_bytes())
    except Exception as exc:
        raise FunctionalError(f"cannot load graph: {exc}") from None
    try:
        private = keys.load_private(request["key_path"])
    except Exception as exc:
        raise FunctionalError(f"cannot load signing key: {exc}") from None
    key_id = keys.key_id_of(private.public_key())
    bundled = bundle_mod.bundle(graph, style, private, key_id)
    return AspOutcome(data=canonical.dumps(bundled.to_json()), media_type=MEDIA_JSON)


def verify_bundle(variable: MeasurementVariable, workspace: Path) -> AspOutcome:
    """Verify a bundle: request {bundle_file, anchors_dir}.

    The evidence is a JSON verification report; a bad signature is a
    *finding*, not a crash, so the appraiser can grade it.
    """
    from .. import bundle as bundle_mod
    from .. import keys
    from ..errors import BadSignatureError, MalformedBundleError, UnknownSignerError

    request = _load_request(variable, workspace)
    for required in ("bundle_file", "anchors_dir"):
        if required not in request:
            raise FunctionalError(f"verify_bundle request is missing {required!r}")
    try:
        body = json.loads((workspace / request["bundle_file"]).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise FunctionalError(f"cannot read bundle file: {exc}") from None

    outcome: dict = {"ok": False, "error_kind": None, "error_detail": None, "failed_index": None}
    try:
        bundle_value = bundle_mod.EvidenceBundle.from_json(body)
        anchors = keys.TrustAnchors(request["anchors_dir"])
        graph, checks = bundle_mod.signature_report(bundle_value, anchors)
        failed = [i for i, c in enumerate(checks) if not c.valid]
        if failed:
            outcome.update(
                error_kind="bad-signature",
                error_detail=f"signature record {failed[0]} failed",
                failed_index=failed[0],
            )
        else:
            outcome["ok"] = True
            outcome["signer_key_ids"] = sorted({c.key_id for c in checks})
    except MalformedBundleError as exc:
        outcome.update(error_kind="malformed", error_detail=str(exc))
    except UnknownSignerError as exc:
        outcome.update(error_kind="unknown-signer", error_detail=str(exc))
    except BadSignatureError as exc:
        outcome.update(error_kind="bad-signature", error_detail=str(exc), failed_index=exc.index)
    return AspOutcome(data=canonical.dumps(outcome), media_type=MEDIA_JSON)


def baseline_compare(variable: MeasurementVariable, workspace: Path) -> AspOutcome:
    """Grade a graph against a baseline: request {graph_file, baseline_file}.

    Evidence is {node_id: match|mismatch|unknown}.
    """
    from .. import baseline as baseline_mod
    from ..graph import deserialize_graph

    request = _load_request(variable, workspace)
    for required in ("graph_file", "baseline_file"):
        if required not in request:
            raise FunctionalError(f"baseline_compare request is missing {required!r}")
    try:
        graph = deserialize_graph((workspace / request["graph_file"]).read_bytes())
    except Exception as exc:
        raise FunctionalError(f"cannot load graph: {exc}") from None
    try:
        records = baseline_mod.load_records(workspace / request["baseline_file"])
    except Exception as exc:
        raise FunctionalError(f"cannot load baseline: {exc}") from None
    verdicts = baseline_mod.compare_graph(graph, records)
    return AspOutcome(
        data=canonical.dumps({str(k): v for k, v in verdicts.items()}),
        media_type=MEDIA_JSON,
    )


PROVIDERS: dict[str, Callable[[MeasurementVariable, Path], AspOutcome]] = {
    "sha1sum": sha1sum,
    "sha256sum": sha256sum,
    "dirlist": dirlist,
    "passwd_users": passwd_users,
    "sysinfo": sysinfo,
    "tpm_quote": tpm_quote,
    "sign_bundle": sign_bundle,
    "verify_bundle": verify_bundle,
    "baseline_compare": baseline_compare,
}
