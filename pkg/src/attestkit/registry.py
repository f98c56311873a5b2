"""Component registry: ASPs, APBs, and measurement specs, keyed by UUID.

The registry is a value, not a service. Every mutation (:func:`register`,
:func:`deregister`, :func:`revalidate`) returns a new snapshot and leaves
the input untouched, so a negotiation session can hold one snapshot for
its whole lifetime while the store changes underneath.

Validity is sticky: deregistering a component invalidates every
component that transitively depends on it (through ``asp_dependencies``
and ``supported_specs`` alike), and re-registering the missing component
later does NOT revive them — that takes an explicit :func:`revalidate`
pass. This keeps "who broke what, when" an explicit operator action
instead of a side effect.
"""

from __future__ import annotations

import enum
import json
import re
import uuid as uuid_mod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from . import canonical
from .errors import (
    DependencyCycleError,
    DuplicateUuidError,
    MetadataError,
    MissingDependencyError,
    UnknownUuidError,
)

_UUID_RE = re.compile(r"^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$")


class ComponentKind(str, enum.Enum):
    ASP = "asp"
    APB = "apb"
    MEASUREMENT_SPEC = "measurement-spec"


class Status(str, enum.Enum):
    VALID = "valid"
    INVALIDATED = "invalidated"


def check_uuid(value: str) -> str:
    """Validate the canonical hyphenated lowercase UUID form."""
    if not isinstance(value, str) or not _UUID_RE.match(value):
        raise MetadataError(f"not a canonical lowercase UUID: {value!r}", field="uuid")
    return value


def new_uuid() -> str:
    return str(uuid_mod.uuid4())


@dataclass(frozen=True)
class PrivilegeManifest:
    """Least-privilege declaration for a component's child process.

    ``readable_paths`` and ``writable_paths`` are glob patterns; the
    session workspace is always implicitly accessible and need not be
    listed. Writable patterns must be a subset of readable ones.
    """

    run_as_user: str = ""
    capabilities: frozenset[str] = frozenset()
    readable_paths: frozenset[str] = frozenset()
    writable_paths: frozenset[str] = frozenset()

    def __post_init__(self):
        extra = self.writable_paths - self.readable_paths
        if extra:
            raise MetadataError(
                f"writable_paths not covered by readable_paths: {sorted(extra)}",
                field="privilege_manifest",
            )

    def to_json(self) -> dict:
        return {
            "run_as_user": self.run_as_user,
            "capabilities": sorted(self.capabilities),
            "readable_paths": sorted(self.readable_paths),
            "writable_paths": sorted(self.writable_paths),
        }

    @classmethod
    def from_json(cls, obj: object) -> "PrivilegeManifest":
        if not isinstance(obj, dict):
            raise MetadataError("privilege_manifest must be an object", field="privilege_manifest")
        known = {"run_as_user", "capabilities", "readable_paths", "writable_paths"}
        unknown = set(obj) - known
        if unknown:
            raise MetadataError(
                f"unknown privilege_manifest fields: {sorted(unknown)}",
                field="privilege_manifest",
            )
        run_as_user = obj.get("run_as_user", "")
        if not isinstance(run_as_user, str):
            raise MetadataError("run_as_user must be a string", field="privilege_manifest")

        def str_set(key: str) -> frozenset[str]:
            raw = obj.get(key, [])
            if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
                raise MetadataError(f"{key} must be a list of strings", field="privilege_manifest")
            return frozenset(raw)

        return cls(
            run_as_user=run_as_user,
            capabilities=str_set("capabilities"),
            readable_paths=str_set("readable_paths"),
            writable_paths=str_set("writable_paths"),
        )


_METADATA_FIELDS = {
    "uuid",
    "kind",
    "name",
    "version",
    "executable",
    "asp_dependencies",
    "supported_specs",
    "feature_tags",
    "privilege_manifest",
}


@dataclass(frozen=True)
class ComponentMetadata:
    uuid: str
    kind: ComponentKind
    name: str
    version: str
    executable: str | None = None
    asp_dependencies: frozenset[str] = frozenset()
    supported_specs: frozenset[str] = frozenset()
    feature_tags: frozenset[str] = frozenset()
    privilege_manifest: PrivilegeManifest = field(default_factory=PrivilegeManifest)

    def __post_init__(self):
        check_uuid(self.uuid)
        for dep in self.asp_dependencies | self.supported_specs:
            check_uuid(dep)
        if not self.name:
            raise MetadataError("name must be nonempty", field="name")
        if self.kind in (ComponentKind.ASP, ComponentKind.APB):
            if not self.executable:
                raise MetadataError(f"kind={self.kind.value} requires an executable", field="executable")
        else:
            if self.executable:
                raise MetadataError("measurement-spec metadata carries no executable", field="executable")
        if self.kind is not ComponentKind.APB:
            if self.asp_dependencies:
                raise MetadataError(
                    f"asp_dependencies is only meaningful for APBs (kind={self.kind.value})",
                    field="asp_dependencies",
                )
            if self.supported_specs:
                raise MetadataError(
                    f"supported_specs is only meaningful for APBs (kind={self.kind.value})",
                    field="supported_specs",
                )
        else:
            if not self.supported_specs:
                raise MetadataError("an APB must declare at least one supported spec", field="supported_specs")
            if self.uuid in self.asp_dependencies:
                raise DependencyCycleError(self.uuid)

    @property
    def dependencies(self) -> frozenset[str]:
        """Everything this component's validity rests on."""
        return self.asp_dependencies | self.supported_specs

    def to_json(self) -> dict:
        obj = {
            "uuid": self.uuid,
            "kind": self.kind.value,
            "name": self.name,
            "version": self.version,
            "asp_dependencies": sorted(self.asp_dependencies),
            "supported_specs": sorted(self.supported_specs),
            "feature_tags": sorted(self.feature_tags),
            "privilege_manifest": self.privilege_manifest.to_json(),
        }
        if self.executable is not None:
            obj["executable"] = self.executable
        return obj

    @classmethod
    def from_json(cls, obj: object) -> "ComponentMetadata":
        if not isinstance(obj, dict):
            raise MetadataError("component metadata must be a JSON object")
        unknown = set(obj) - _METADATA_FIELDS
        if unknown:
            raise MetadataError(f"unknown metadata fields: {sorted(unknown)}")
        for required in ("uuid", "kind", "name", "version"):
            if required not in obj:
                raise MetadataError(f"missing required field {required!r}", field=required)
        kind_raw = obj["kind"]
        try:
            kind = ComponentKind(kind_raw)
        except ValueError:
            raise MetadataError(f"unknown component kind {kind_raw!r}", field="kind") from None
        for key in ("uuid", "name", "version"):
            if not isinstance(obj[key], str):
                raise MetadataError(f"{key} must be a string", field=key)
        executable = obj.get("executable")
        if executable is not None and not isinstance(executable, str):
            raise MetadataError("executable must be a string", field="executable")

        def uuid_set(key: str) -> frozenset[str]:
            raw = obj.get(key, [])
            if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
                raise MetadataError(f"{key} must be a list of UUID strings", field=key)
            if len(set(raw)) != len(raw):
                raise MetadataError(f"{key} contains duplicates", field=key)
            return frozenset(raw)

        tags_raw = obj.get("feature_tags", [])
        if not isinstance(tags_raw, list) or not all(isinstance(x, str) for x in tags_raw):
            raise MetadataError("feature_tags must be a list of strings", field="feature_tags")

        return cls(
            uuid=obj["uuid"],
            kind=kind,
            name=obj["name"],
            version=obj["version"],
            executable=executable,
            asp_dependencies=uuid_set("asp_dependencies"),
            supported_specs=uuid_set("supported_specs"),
            feature_tags=frozenset(tags_raw),
            privilege_manifest=PrivilegeManifest.from_json(obj.get("privilege_manifest", {})),
        )


def load_metadata(path: str | Path) -> ComponentMetadata:
    """Parse a metadata JSON file, rejecting unknown fields."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise MetadataError(f"cannot read metadata file {path}: {exc}") from None
    try:
        obj = json.loads(raw)
    except ValueError as exc:
        raise MetadataError(f"metadata file {path} is not valid JSON: {exc}") from None
    return ComponentMetadata.from_json(obj)


def dump_metadata(meta: ComponentMetadata, path: str | Path) -> None:
    Path(path).write_bytes(canonical.dumps(meta.to_json()) + b"\n")


@dataclass(frozen=True)
class Registry:
    """An immutable registry snapshot."""

    components: Mapping[str, ComponentMetadata] = field(default_factory=dict)
    status: Mapping[str, Status] = field(default_factory=dict)

    def get(self, uuid: str) -> ComponentMetadata:
        try:
            return self.components[uuid]
        except KeyError:
            raise UnknownUuidError(uuid) from None

    def __contains__(self, uuid: str) -> bool:
        return uuid in self.components

    def is_valid(self, uuid: str) -> bool:
        return self.status.get(uuid) is Status.VALID

    def of_kind(self, kind: ComponentKind) -> list[ComponentMetadata]:
        return sorted(
            (m for m in self.components.values() if m.kind is kind),
            key=lambda m: m.uuid,
        )

    def _dependents_of(self, uuid: str) -> set[str]:
        """Transitive closure of components whose validity rests on ``uuid``."""
        reverse: dict[str, set[str]] = {}
        for meta in self.components.values():
            for dep in meta.dependencies:
                reverse.setdefault(dep, set()).add(meta.uuid)
        closure: set[str] = set()
        frontier = [uuid]
        while frontier:
            current = frontier.pop()
            for dependent in reverse.get(current, ()):
                if dependent not in closure:
                    closure.add(dependent)
                    frontier.append(dependent)
        return closure


def register(registry: Registry, meta: ComponentMetadata) -> Registry:
    """Add a component; its dependencies must already be present and valid."""
    if meta.uuid in registry.components:
        raise DuplicateUuidError(meta.uuid)
    missing = [dep for dep in meta.dependencies if not registry.is_valid(dep)]
    if missing:
        raise MissingDependencyError(meta.uuid, missing)
    # Dependencies must exist before their dependents, so the graph is a
    # DAG by construction; the one expressible cycle is a self-reference,
    # rejected in metadata validation.
    if meta.kind is ComponentKind.APB:
        for dep in meta.asp_dependencies:
            dep_kind = registry.components[dep].kind
            if dep_kind not in (ComponentKind.ASP, ComponentKind.APB):
                raise MetadataError(
                    f"asp_dependencies entry {dep} is a {dep_kind.value}, not an asp or apb",
                    field="asp_dependencies",
                )
        for dep in meta.supported_specs:
            dep_kind = registry.components[dep].kind
            if dep_kind is not ComponentKind.MEASUREMENT_SPEC:
                raise MetadataError(
                    f"supported_specs entry {dep} is a {dep_kind.value}, not a measurement-spec",
                    field="supported_specs",
                )
    components = dict(registry.components)
    status = dict(registry.status)
    components[meta.uuid] = meta
    status[meta.uuid] = Status.VALID
    return Registry(components, status)


def deregister(registry: Registry, uuid: str) -> tuple[Registry, frozenset[str]]:
    """Remove a component and invalidate its transitive dependents.

    Returns the new snapshot and the set of UUIDs that were invalidated
    (the full dependent closure, including components that were already
    invalidated for other reasons).
    """
    if uuid not in registry.components:
        raise UnknownUuidError(uuid)
    closure = registry._dependents_of(uuid)
    components = dict(registry.components)
    status = dict(registry.status)
    del components[uuid]
    del status[uuid]
    for dependent in closure:
        if dependent in status:
            status[dependent] = Status.INVALIDATED
    return Registry(components, status), frozenset(closure)


def revalidate(registry: Registry) -> Registry:
    """Explicitly re-mark invalidated components whose dependencies are whole.

    Runs to a fixpoint so chains revive bottom-up in one call. This is
    the only way an invalidated component becomes valid again.
    """
    status = dict(registry.status)
    changed = True
    while changed:
        changed = False
        for uuid, meta in registry.components.items():
            if status[uuid] is Status.INVALIDATED and all(
                status.get(dep) is Status.VALID for dep in meta.dependencies
            ):
                status[uuid] = Status.VALID
                changed = True
    return Registry(dict(registry.components), status)


def valid_pairs(registry: Registry) -> frozenset[tuple[str, str]]:
    """All (apb_uuid, spec_uuid) combinations currently executable."""
    pairs = set()
    for meta in registry.components.values():
        if meta.kind is not ComponentKind.APB or not registry.is_valid(meta.uuid):
            continue
        for spec in meta.supported_specs:
            if registry.is_valid(spec):
                pairs.add((meta.uuid, spec))
    return frozenset(pairs)


def snapshot_from_parts(
    metas: Iterable[ComponentMetadata], invalid: Iterable[str] = ()
) -> Registry:
    """Rebuild a snapshot from stored metadata plus a persisted status set.

    Used when loading a store from disk: files give the components, the
    status file says which ones a past deregistration left invalidated.
    """
    components: dict[str, ComponentMetadata] = {}
    status: dict[str, Status] = {}
    invalid_set = set(invalid)
    for meta in metas:
        if meta.uuid in components:
            raise DuplicateUuidError(meta.uuid)
        components[meta.uuid] = meta
        status[meta.uuid] = Status.INVALIDATED if meta.uuid in invalid_set else Status.VALID
    registry = Registry(components, status)
    # A component whose dependency is absent or invalid cannot be valid,
    # whatever the status file says; stored state may predate a crash.
    status = dict(registry.status)
    changed = True
    while changed:
        changed = False
        for uuid, meta in components.items():
            if status[uuid] is Status.VALID and not all(
                status.get(dep) is Status.VALID for dep in meta.dependencies
            ):
                status[uuid] = Status.INVALIDATED
                changed = True
    return Registry(components, status)
