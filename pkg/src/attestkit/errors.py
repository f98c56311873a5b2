"""Exception hierarchy shared across the toolkit.

Every error raised by attestkit code derives from :class:`AttestKitError`
so callers can catch the whole family at a process boundary (the daemon,
the ASP runner) and map it onto an exit status or an error report without
enumerating subclasses.
"""

from __future__ import annotations


class AttestKitError(Exception):
    """Base class for all attestkit errors."""


# --- registry -------------------------------------------------------------

class MetadataError(AttestKitError):
    """Component metadata failed parsing or validation."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DuplicateUuidError(AttestKitError):
    def __init__(self, uuid: str):
        super().__init__(f"component {uuid} is already registered")
        self.uuid = uuid


class UnknownUuidError(AttestKitError):
    def __init__(self, uuid: str):
        super().__init__(f"no component registered under {uuid}")
        self.uuid = uuid


class MissingDependencyError(AttestKitError):
    """Registration referenced components that are absent or invalidated."""

    def __init__(self, uuid: str, missing: list[str]):
        super().__init__(
            f"component {uuid} requires unavailable components: {', '.join(sorted(missing))}"
        )
        self.uuid = uuid
        self.missing = sorted(missing)


class DependencyCycleError(AttestKitError):
    def __init__(self, uuid: str):
        super().__init__(f"component {uuid} would introduce a dependency cycle")
        self.uuid = uuid


# --- policy ---------------------------------------------------------------

class PolicySyntaxError(AttestKitError):
    def __init__(self, message: str, line: int):
        super().__init__(f"policy line {line}: {message}")
        self.line = line


class NoAcceptableOptionError(AttestKitError):
    """The peer's counter-offer shares nothing with what policy permits."""


# --- wire frames / negotiation --------------------------------------------

class FrameError(AttestKitError):
    """Malformed, truncated, or oversized wire frame."""


class ContractError(AttestKitError):
    """A negotiation contract violated its schema."""


class ProtocolViolation(AttestKitError):
    """The peer sent a message its state machine may not send."""


class ChannelTimeout(AttestKitError):
    """No complete frame arrived within the per-message timeout."""


# --- measurement specs ----------------------------------------------------

class SpecSyntaxError(AttestKitError):
    def __init__(self, message: str, line: int, col: int = 0):
        loc = f"line {line}" + (f", col {col}" if col else "")
        super().__init__(f"measurement spec {loc}: {message}")
        self.line = line
        self.col = col


class SpecValidationError(AttestKitError):
    """Structurally well-formed spec with inconsistent content."""


class CompositionError(AttestKitError):
    """Two specs could not be composed (irreconcilable name collision)."""


class UnknownAspFeatureError(AttestKitError):
    def __init__(self, feature: str):
        super().__init__(f"executor provides no ASP feature {feature!r}")
        self.feature = feature


class UnknownPredicateError(AttestKitError):
    def __init__(self, predicate: str):
        super().__init__(f"executor provides no guard predicate {predicate!r}")
        self.predicate = predicate


# --- ASP invocation -------------------------------------------------------

class AspError(AttestKitError):
    """Base for ASP child process failures visible to the caller."""


class AspSpawnError(AspError):
    pass


class AspProtocolError(AspError):
    """The child violated the framed stdin/stdout contract."""


class AspTimeoutError(AspError):
    pass


class OversizeEvidenceError(AspError):
    def __init__(self, size: int, limit: int):
        super().__init__(f"evidence of {size} bytes exceeds the {limit} byte cap")
        self.size = size
        self.limit = limit


# --- evidence bundles -----------------------------------------------------

class BundleError(AttestKitError):
    pass


class MalformedBundleError(BundleError):
    pass


class BadSignatureError(BundleError):
    """A signature failed verification.

    ``index`` identifies the failing record: the node index for per-item
    bundles, the earliest broken link for chained bundles, 0 for aggregate.
    """

    def __init__(self, index: int, detail: str = ""):
        super().__init__(f"signature {index} failed verification" + (f": {detail}" if detail else ""))
        self.index = index


class UnknownSignerError(BundleError):
    def __init__(self, key_id: str):
        super().__init__(f"no trust anchor matches signer {key_id}")
        self.key_id = key_id


# --- daemon / store / monitor ---------------------------------------------

class ConfigError(AttestKitError):
    pass


class StoreError(AttestKitError):
    pass


class SessionError(AttestKitError):
    """A negotiation or execution session failed; carries the reason."""


class MonitorError(AttestKitError):
    """Host-monitoring service failure."""


class UnknownHostError(MonitorError):
    def __init__(self, host_id: str):
        super().__init__(f"no host registered under {host_id}")
        self.host_id = host_id


class UnknownEvaluationError(MonitorError):
    def __init__(self, eval_id: str):
        super().__init__(f"no evaluation recorded under {eval_id}")
        self.eval_id = eval_id


class ServiceClosedError(MonitorError):
    """The service is shutting down and accepts no new work."""
