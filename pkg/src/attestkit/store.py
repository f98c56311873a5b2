"""On-disk state for one attestation manager.

A store is a directory the daemon owns::

    metadata/<uuid>.json   component metadata (one file per component)
    status.json            which components past deregistrations invalidated
    specs/<uuid>.mspec     measurement spec program text
    bin/                   generated wrapper executables for ASPs and APBs
    keys/identity.pem      this manager's signing identity (+ .pub.pem)
    anchors/<name>.pem     peers whose evidence signatures are trusted
    baseline/baseline.jsonl
    blobs/<sha256>         content-addressed bundles and reports
    sessions/<session-id>/ scratch workspaces, one per session

Everything a registry snapshot needs is re-readable from here, so a
daemon restart loses nothing but in-flight sessions.
"""

from __future__ import annotations

import json
import os
import shutil
import sys
import tempfile
import uuid as uuid_mod
from pathlib import Path
from typing import Iterable, Optional

from . import canonical
from .errors import StoreError
from .keys import TrustAnchors, generate_identity, key_id_of, load_public, public_path
from .mspec import MeasurementSpec, parse_spec
from .registry import (
    ComponentKind,
    ComponentMetadata,
    PrivilegeManifest,
    Registry,
    deregister,
    load_metadata,
    register,
    revalidate,
    snapshot_from_parts,
)

_NAMESPACE = uuid_mod.NAMESPACE_URL

MEASUREMENT_FEATURES = (
    "sha1sum",
    "sha256sum",
    "dirlist",
    "passwd_users",
    "sysinfo",
    "tpm_quote",
)
HELPER_FEATURES = ("sign_bundle", "verify_bundle", "baseline_compare")
BUNDLE_STYLES = ("aggregate", "per-item", "chained")


def builtin_asp_uuid(feature: str) -> str:
    return str(uuid_mod.uuid5(_NAMESPACE, f"urn:x-attest:asp:{feature}"))


def builtin_apb_uuid(style: str) -> str:
    return str(uuid_mod.uuid5(_NAMESPACE, f"urn:x-attest:apb:generic:{style}"))


def builtin_spec_uuid(name: str) -> str:
    return str(uuid_mod.uuid5(_NAMESPACE, f"urn:x-attest:spec:{name}"))


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    # --- layout -----------------------------------------------------------

    @property
    def metadata_dir(self) -> Path:
        return self.root / "metadata"

    @property
    def status_path(self) -> Path:
        return self.root / "status.json"

    @property
    def specs_dir(self) -> Path:
        return self.root / "specs"

    @property
    def bin_dir(self) -> Path:
        return self.root / "bin"

    @property
    def keys_dir(self) -> Path:
        return self.root / "keys"

    @property
    def identity_path(self) -> Path:
        return self.keys_dir / "identity.pem"

    @property
    def anchors_dir(self) -> Path:
        return self.root / "anchors"

    @property
    def baseline_path(self) -> Path:
        return self.root / "baseline" / "baseline.jsonl"

    @property
    def blobs_dir(self) -> Path:
        return self.root / "blobs"

    @property
    def sessions_dir(self) -> Path:
        return self.root / "sessions"

    def exists(self) -> bool:
        return self.metadata_dir.is_dir() and self.identity_path.is_file()

    def init(self) -> str:
        """Create the directory skeleton and a fresh identity; returns
        the new identity's key id. Safe to call once only."""
        if self.exists():
            raise StoreError(f"store at {self.root} is already initialized")
        for directory in (
            self.metadata_dir,
            self.specs_dir,
            self.bin_dir,
            self.keys_dir,
            self.anchors_dir,
            self.baseline_path.parent,
            self.blobs_dir,
            self.sessions_dir,
        ):
            directory.mkdir(parents=True, exist_ok=True)
        key_id = generate_identity(self.identity_path)
        self._write_status([])
        return key_id

    # --- registry persistence ---------------------------------------------

    def _write_status(self, invalid: Iterable[str]) -> None:
        payload = canonical.dumps({"invalid": sorted(set(invalid))})
        fd, tmp = tempfile.mkstemp(dir=str(self.root), prefix=".status-")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
            os.replace(tmp, self.status_path)
        except OSError:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def _read_status(self) -> set[str]:
        try:
            raw = json.loads(self.status_path.read_text())
        except FileNotFoundError:
            return set()
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreError(f"unreadable status file {self.status_path}: {exc}") from None
        invalid = raw.get("invalid", []) if isinstance(raw, dict) else []
        return {u for u in invalid if isinstance(u, str)}

    def load_registry(self) -> Registry:
        metas = []
        if self.metadata_dir.is_dir():
            for entry in sorted(self.metadata_dir.glob("*.json")):
                metas.append(load_metadata(entry))
        return snapshot_from_parts(metas, invalid=self._read_status())

    def _persist(self, registry: Registry) -> Registry:
        self._write_status(
            u for u in registry.components if not registry.is_valid(u)
        )
        return registry

    def _write_metadata(self, meta: ComponentMetadata) -> None:
        path = self.metadata_dir / f"{meta.uuid}.json"
        path.write_bytes(canonical.dumps(meta.to_json()))

    def add_component(
        self, meta: ComponentMetadata, spec_text: Optional[str] = None
    ) -> Registry:
        if meta.kind is ComponentKind.MEASUREMENT_SPEC:
            if spec_text is None:
                raise StoreError("a measurement spec needs its program text")
            # must parse before anything lands on disk
            parse_spec(spec_text, spec_uuid=meta.uuid)
        registry = register(self.load_registry(), meta)
        self._write_metadata(meta)
        if spec_text is not None:
            self.spec_path(meta.uuid).write_text(spec_text)
        return self._persist(registry)

    def remove_component(self, uuid: str) -> tuple[Registry, frozenset[str]]:
        registry, invalidated = deregister(self.load_registry(), uuid)
        for path in (
            self.metadata_dir / f"{uuid}.json",
            self.spec_path(uuid),
        ):
            try:
                path.unlink()
            except FileNotFoundError:
                pass
        return self._persist(registry), invalidated

    def revalidate(self) -> tuple[Registry, frozenset[str]]:
        before = self.load_registry()
        after = revalidate(before)
        revived = frozenset(
            u for u in after.components
            if after.is_valid(u) and not before.is_valid(u)
        )
        return self._persist(after), revived

    # --- specs ------------------------------------------------------------

    def spec_path(self, uuid: str) -> Path:
        return self.specs_dir / f"{uuid}.mspec"

    def load_spec(self, uuid: str) -> MeasurementSpec:
        try:
            text = self.spec_path(uuid).read_text()
        except OSError as exc:
            raise StoreError(f"no spec program stored for {uuid}: {exc}") from None
        return parse_spec(text, spec_uuid=uuid)

    def add_spec(self, name: str, text: str, uuid: Optional[str] = None) -> str:
        """Register a measurement spec and teach the generic APBs about
        it, so the new (apb, spec) pairs become negotiable. The first
        spec a store learns brings the generic APBs into existence — an
        APB may not register without at least one supported spec."""
        spec_uuid = uuid or str(uuid_mod.uuid4())
        meta = ComponentMetadata(
            uuid=spec_uuid,
            kind=ComponentKind.MEASUREMENT_SPEC,
            name=name,
            version="1",
            executable=None,
            asp_dependencies=frozenset(),
            supported_specs=frozenset(),
            feature_tags=frozenset(),
            privilege_manifest=PrivilegeManifest(),
        )
        self.add_component(meta, spec_text=text)
        self._ensure_generic_apbs(spec_uuid)
        return spec_uuid

    def _ensure_generic_apbs(self, spec_uuid: str) -> None:
        registry = self.load_registry()
        asp_uuids = frozenset(
            builtin_asp_uuid(f) for f in MEASUREMENT_FEATURES + HELPER_FEATURES
        )
        if not all(u in registry for u in asp_uuids):
            # a spec-only store; there is nothing to execute it with
            return
        executable = self.write_wrapper("apb_generic", "attestkit.apb.main")
        for style in BUNDLE_STYLES:
            apb_uuid = builtin_apb_uuid(style)
            if apb_uuid in registry:
                self._extend_apb_specs(apb_uuid, spec_uuid)
            else:
                self.add_component(
                    ComponentMetadata(
                        uuid=apb_uuid,
                        kind=ComponentKind.APB,
                        name=f"apb-generic-{style}",
                        version="1",
                        executable=executable,
                        asp_dependencies=asp_uuids,
                        supported_specs=frozenset({spec_uuid}),
                        feature_tags=frozenset({f"style:{style}"}),
                        privilege_manifest=PrivilegeManifest(),
                    )
                )

    def _extend_apb_specs(self, apb_uuid: str, spec_uuid: str) -> None:
        registry = self.load_registry()
        old = registry.get(apb_uuid)
        if spec_uuid in old.supported_specs:
            return
        updated = ComponentMetadata(
            uuid=old.uuid,
            kind=old.kind,
            name=old.name,
            version=old.version,
            executable=old.executable,
            asp_dependencies=old.asp_dependencies,
            supported_specs=old.supported_specs | {spec_uuid},
            feature_tags=old.feature_tags,
            privilege_manifest=old.privilege_manifest,
        )
        registry, _ = deregister(registry, apb_uuid)
        registry = register(registry, updated)
        self._write_metadata(updated)
        self._persist(registry)

    # --- wrappers ---------------------------------------------------------

    def write_wrapper(self, name: str, module: str, args: tuple[str, ...] = ()) -> str:
        """Generate an executable that runs ``module.main(args)`` under
        the same interpreter as this process."""
        arg_list = ", ".join(repr(a) for a in args)
        path = self.bin_dir / name
        path.write_text(
            f"#!{sys.executable}\n"
            f"from {module} import main\n"
            f"raise SystemExit(main([{arg_list}]))\n"
        )
        path.chmod(0o755)
        return str(path)

    # --- keys and anchors -------------------------------------------------

    def identity_key_id(self) -> str:
        return key_id_of(load_public(public_path(self.identity_path)))

    def anchors(self) -> TrustAnchors:
        return TrustAnchors(self.anchors_dir)

    def add_anchor(self, name: str, public_pem: bytes) -> None:
        (self.anchors_dir / f"{name}.pem").write_bytes(public_pem)

    def public_identity_pem(self) -> bytes:
        return public_path(self.identity_path).read_bytes()

    # --- blobs ------------------------------------------------------------

    def put_blob(self, data: bytes) -> str:
        import hashlib

        digest = hashlib.sha256(data).hexdigest()
        path = self.blobs_dir / digest
        if not path.exists():
            path.write_bytes(data)
        return digest

    def get_blob(self, digest: str) -> bytes:
        try:
            return (self.blobs_dir / digest).read_bytes()
        except OSError as exc:
            raise StoreError(f"no blob {digest}: {exc}") from None

    # --- session workspaces -----------------------------------------------

    def new_workspace(self, session_id: str) -> Path:
        workspace = self.sessions_dir / session_id
        workspace.mkdir(parents=True, exist_ok=False)
        return workspace

    def drop_workspace(self, session_id: str) -> None:
        shutil.rmtree(self.sessions_dir / session_id, ignore_errors=True)


# --- builtin installation -------------------------------------------------

_SYSTEM_SPEC_TEXT = """\
measure p :: path
  | is_reg p = sha1sum p
  | is_dir p = dirlist p >>= measure
  otherwise = success
do measure ("/etc" :: path)
"""

_USERS_SPEC_TEXT = """\
users u :: path
  | is_reg u = passwd_users u
  otherwise = success
do users ("/etc/passwd" :: path)
"""


def _asp_manifest(store: Store, feature: str, readable_roots: tuple[str, ...]) -> PrivilegeManifest:
    if feature == "sign_bundle":
        keys = str(store.keys_dir)
        return PrivilegeManifest(
            readable_paths=frozenset({keys, f"{keys}/**"}),
        )
    if feature == "verify_bundle":
        anchors = str(store.anchors_dir)
        return PrivilegeManifest(
            readable_paths=frozenset({anchors, f"{anchors}/**"}),
        )
    if feature == "baseline_compare":
        return PrivilegeManifest(
            readable_paths=frozenset({str(store.baseline_path)}),
        )
    if feature in ("sysinfo", "tpm_quote"):
        return PrivilegeManifest()
    patterns = set()
    for root in readable_roots:
        root = root.rstrip("/") or "/"
        patterns.add(root)
        patterns.add(f"{root}/**")
    return PrivilegeManifest(readable_paths=frozenset(patterns))


def install_builtins(
    store: Store,
    readable_roots: tuple[str, ...] = ("/etc",),
    with_system_specs: bool = True,
) -> Registry:
    """Populate a fresh store: ASP wrappers, the generic APB in all
    three bundling styles, and (optionally) the stock spec programs.

    Builtin UUIDs are derived from stable names, so two independently
    initialized stores agree about every builtin pair's identity.
    """
    registry = store.load_registry()
    for feature in MEASUREMENT_FEATURES + HELPER_FEATURES:
        asp_uuid = builtin_asp_uuid(feature)
        if asp_uuid in registry:
            continue
        executable = store.write_wrapper(
            f"asp_{feature}", "attestkit.asps.runner", (feature,)
        )
        meta = ComponentMetadata(
            uuid=asp_uuid,
            kind=ComponentKind.ASP,
            name=f"asp-{feature.replace('_', '-')}",
            version="1",
            executable=executable,
            asp_dependencies=frozenset(),
            supported_specs=frozenset(),
            feature_tags=frozenset({f"feature:{feature}"}),
            privilege_manifest=_asp_manifest(store, feature, readable_roots),
        )
        registry = store.add_component(meta)

    if with_system_specs:
        if builtin_spec_uuid("system-files") not in registry:
            store.add_spec(
                "system-files", _SYSTEM_SPEC_TEXT,
                uuid=builtin_spec_uuid("system-files"),
            )
        if builtin_spec_uuid("login-accounts") not in registry:
            store.add_spec(
                "login-accounts", _USERS_SPEC_TEXT,
                uuid=builtin_spec_uuid("login-accounts"),
            )
    return store.load_registry()
