"""Attestation protocol blocks.

An APB is the per-session work process an AM spawns after negotiation
settles on an (apb, spec) pair. The same generic executable serves both
roles: as the attester's block it evaluates the measurement spec
through child ASPs, has the result signed, and ships the bundle; as the
appraiser's block it receives the bundle, has it verified and graded,
and hands the AM a finished report.

The AM talks to its APB over stdin/stdout frames; the peer APB is
reached through an inherited socket fd, so evidence never transits the
AM process itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..asps import (
    DEFAULT_ASP_TIMEOUT,
    ERROR,
    AspRequest,
    run_asp,
)
from ..asps.local import PREDICATES
from ..errors import AspError, AspProtocolError, UnknownAspFeatureError, UnknownPredicateError
from ..mspec import AspOutcome, MeasurementVariable
from ..registry import ComponentMetadata, Registry

ROLE_ATTESTER = "attester"
ROLE_APPRAISER = "appraiser"

FEATURE_TAG_PREFIX = "feature:"
STYLE_TAG_PREFIX = "style:"


def style_of(meta: ComponentMetadata) -> Optional[str]:
    for tag in meta.feature_tags:
        if tag.startswith(STYLE_TAG_PREFIX):
            return tag[len(STYLE_TAG_PREFIX):]
    return None


@dataclass(frozen=True)
class ApbContext:
    """Everything an APB child needs, delivered as its first stdin frame."""

    role: str
    store_root: str
    workspace: str
    session_id: str
    nonce: str
    apb_uuid: str
    spec_uuid: str
    style: str
    channel_fd: int
    target_identity: str
    peer_name: str
    categories: tuple[int, ...] = ()
    asp_timeout: float = DEFAULT_ASP_TIMEOUT
    trace_dir: Optional[str] = None
    trace_file: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "type": "apb-context",
            "role": self.role,
            "store_root": self.store_root,
            "workspace": self.workspace,
            "session_id": self.session_id,
            "nonce": self.nonce,
            "apb_uuid": self.apb_uuid,
            "spec_uuid": self.spec_uuid,
            "style": self.style,
            "channel_fd": self.channel_fd,
            "target_identity": self.target_identity,
            "peer_name": self.peer_name,
            "categories": list(self.categories),
            "asp_timeout": self.asp_timeout,
            "trace_dir": self.trace_dir,
            "trace_file": self.trace_file,
        }

    @classmethod
    def from_json(cls, obj: object) -> "ApbContext":
        if not isinstance(obj, dict) or obj.get("type") != "apb-context":
            raise AspProtocolError("not an apb-context body")
        if obj.get("role") not in (ROLE_ATTESTER, ROLE_APPRAISER):
            raise AspProtocolError(f"unknown apb role {obj.get('role')!r}")
        try:
            return cls(
                role=obj["role"],
                store_root=obj["store_root"],
                workspace=obj["workspace"],
                session_id=obj["session_id"],
                nonce=obj["nonce"],
                apb_uuid=obj["apb_uuid"],
                spec_uuid=obj["spec_uuid"],
                style=obj["style"],
                channel_fd=int(obj["channel_fd"]),
                target_identity=obj["target_identity"],
                peer_name=obj["peer_name"],
                categories=tuple(int(c) for c in obj.get("categories", [])),
                asp_timeout=float(obj.get("asp_timeout", DEFAULT_ASP_TIMEOUT)),
                trace_dir=obj.get("trace_dir"),
                trace_file=obj.get("trace_file"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise AspProtocolError(f"malformed apb-context: {exc}") from None


class ProcessExecutor:
    """Run measurement features as registered ASP child processes.

    Feature names resolve to ASP uuids through ``feature:<name>`` tags,
    and only within the APB's declared dependencies — an APB cannot
    reach an ASP it never declared, however the registry grows.
    Predicates are plain lstat probes and stay in-process.
    """

    def __init__(
        self,
        registry: Registry,
        apb_meta: ComponentMetadata,
        workspace: str | Path,
        categories: tuple[int, ...] = (),
        timeout: float = DEFAULT_ASP_TIMEOUT,
        trace_dir: Optional[str] = None,
        trace_file: Optional[str] = None,
    ):
        self._registry = registry
        self._workspace = str(workspace)
        self._categories = categories
        self._timeout = timeout
        self._trace_dir = trace_dir
        self._trace_file = trace_file
        self._features: dict[str, str] = {}
        for dep_uuid in sorted(apb_meta.asp_dependencies):
            if dep_uuid not in registry:
                continue
            for tag in registry.get(dep_uuid).feature_tags:
                if tag.startswith(FEATURE_TAG_PREFIX):
                    self._features.setdefault(tag[len(FEATURE_TAG_PREFIX):], dep_uuid)

    def predicate(self, name: str, variable: MeasurementVariable) -> bool:
        try:
            probe = PREDICATES[name]
        except KeyError:
            raise UnknownPredicateError(name) from None
        return probe(variable)

    def invoke(self, feature: str, variable: MeasurementVariable) -> AspOutcome:
        asp_uuid = self._features.get(feature)
        if asp_uuid is None:
            raise UnknownAspFeatureError(feature)
        request = AspRequest(
            asp_uuid=asp_uuid,
            function=feature,
            variable=variable,
            workspace=self._workspace,
            session_categories=self._categories,
        )
        result = run_asp(
            self._registry,
            request,
            timeout=self._timeout,
            trace_dir=self._trace_dir,
            trace_file=self._trace_file,
        )
        if result.status == ERROR:
            raise AspError(result.error_detail or f"{feature} failed")
        return AspOutcome(
            data=result.evidence,
            media_type=result.media_type,
            produced=result.produced_variables,
        )
