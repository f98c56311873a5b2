"""Contract negotiation between an appraiser and an attester.

A session is opened by a requester's *request* message; the appraiser
then offers options to the attester in an *initial* contract, the
attester answers with a *counter* that must be a subset of what was
offered, and the appraiser closes with a *selection* drawn from that
counter. Either side may end the exchange with a terminal *refusal*
instead of its normal message. A successful session therefore puts
exactly four messages on the wire: request, initial, counter,
selection.

The requester mints the session id and a fresh nonce in its request;
every later message must echo both verbatim, and the nonce later binds
the evidence bundle to this session. Phase order is strict — an initial
may only be answered by a counter or a refusal, a counter only by a
selection or a refusal — and any deviation (wrong phase, tampered echo,
counter not a subset, selection outside the counter) ends the session
as a failure.
"""

from __future__ import annotations

import enum
import re
import secrets
from dataclasses import dataclass
from typing import Optional, Union

from . import canonical, framing
from .errors import ContractError, ProtocolViolation
from .policy import (
    Defer,
    Fail,
    IdentityStrength,
    Offer,
    Option,
    Phase,
    PolicyContext,
    Role,
    SelectionPolicy,
    Strengthen,
    choose_preferred,
    confirm_selection,
    evaluate,
    filter_options,
    registry_filter,
)
from .registry import Registry, check_uuid

MAX_HOPS = 4

_SESSION_RE = re.compile(r"^[0-9a-f]{32}$")
_NONCE_RE = re.compile(r"^[0-9a-f]{64}$")


class ContractPhase(str, enum.Enum):
    REQUEST = "request"
    INITIAL = "initial"
    COUNTER = "counter"
    SELECTION = "selection"
    REFUSAL = "refusal"


def fresh_session_id() -> str:
    return secrets.token_hex(16)


def fresh_nonce() -> str:
    return secrets.token_hex(32)


def _encode_option(option: Option) -> str:
    return f"{option[0]}/{option[1]}"


def _decode_option(text: str) -> Option:
    if not isinstance(text, str) or text.count("/") != 1:
        raise ContractError(f"malformed option {text!r} (expected apb-uuid/spec-uuid)")
    apb, spec = text.split("/")
    try:
        check_uuid(apb)
        check_uuid(spec)
    except Exception as exc:
        raise ContractError(f"malformed option {text!r}: {exc}") from None
    return (apb, spec)


# Which optional fields each phase carries, beyond session_id and nonce.
_PHASE_FIELDS = {
    ContractPhase.REQUEST: {"resource", "target", "hops"},
    ContractPhase.INITIAL: {"resource", "options"},
    ContractPhase.COUNTER: {"options"},
    ContractPhase.SELECTION: {"selected"},
    ContractPhase.REFUSAL: {"reason"},
}


@dataclass(frozen=True)
class Contract:
    """One negotiation message. Field presence depends on the phase."""

    phase: ContractPhase
    session_id: str
    nonce: str
    resource: Optional[str] = None
    target: Optional[str] = None
    hops: Optional[int] = None
    options: tuple[Option, ...] = ()
    selected: Optional[Option] = None
    reason: Optional[str] = None

    def __post_init__(self):
        if not _SESSION_RE.match(self.session_id):
            raise ContractError("session_id must be 32 lowercase hex characters")
        if not _NONCE_RE.match(self.nonce):
            raise ContractError("nonce must be 64 lowercase hex characters")
        fields = _PHASE_FIELDS[self.phase]
        if ("resource" in fields) != (self.resource is not None):
            raise ContractError(f"{self.phase.value} contract resource mismatch")
        if ("target" in fields) != (self.target is not None):
            raise ContractError(f"{self.phase.value} contract target mismatch")
        if ("hops" in fields) != (self.hops is not None):
            raise ContractError(f"{self.phase.value} contract hops mismatch")
        if ("options" in fields) != bool(self.options):
            raise ContractError(
                f"{self.phase.value} contract must{' ' if 'options' in fields else ' not '}carry options"
            )
        if ("selected" in fields) != (self.selected is not None):
            raise ContractError(f"{self.phase.value} contract selected mismatch")
        if ("reason" in fields) != (self.reason is not None):
            raise ContractError(f"{self.phase.value} contract reason mismatch")
        if self.hops is not None and not 0 <= self.hops <= MAX_HOPS:
            raise ContractError(f"hops must be between 0 and {MAX_HOPS}")
        if self.options and len(set(self.options)) != len(self.options):
            raise ContractError("contract options must not repeat")

    def nonce_bytes(self) -> bytes:
        return bytes.fromhex(self.nonce)

    def to_json(self) -> dict:
        obj: dict = {
            "type": "contract",
            "phase": self.phase.value,
            "session_id": self.session_id,
            "nonce": self.nonce,
        }
        if self.resource is not None:
            obj["resource"] = self.resource
        if self.target is not None:
            obj["target"] = self.target
        if self.hops is not None:
            obj["hops"] = self.hops
        if self.options:
            obj["options"] = [_encode_option(o) for o in self.options]
        if self.selected is not None:
            obj["selected"] = _encode_option(self.selected)
        if self.reason is not None:
            obj["reason"] = self.reason
        return obj

    @classmethod
    def from_json(cls, obj: object) -> "Contract":
        if not isinstance(obj, dict) or obj.get("type") != "contract":
            raise ContractError("not a contract body")
        try:
            phase = ContractPhase(obj["phase"])
        except (KeyError, ValueError):
            raise ContractError(f"unknown contract phase {obj.get('phase')!r}") from None
        allowed = {"type", "phase", "session_id", "nonce"} | _PHASE_FIELDS[phase]
        unknown = set(obj) - allowed
        if unknown:
            raise ContractError(f"{phase.value} contract has unknown fields {sorted(unknown)}")
        def need(key):
            if key not in obj:
                raise ContractError(f"{phase.value} contract is missing {key}")
            return obj[key]

        for key in ("session_id", "nonce"):
            if not isinstance(need(key), str):
                raise ContractError(f"{key} must be a string")
        kwargs: dict = {
            "phase": phase,
            "session_id": obj["session_id"],
            "nonce": obj["nonce"],
        }
        if "resource" in _PHASE_FIELDS[phase]:
            if not isinstance(need("resource"), str):
                raise ContractError("resource must be a string")
            kwargs["resource"] = obj["resource"]
        if "target" in _PHASE_FIELDS[phase]:
            if not isinstance(need("target"), str):
                raise ContractError("target must be a string")
            kwargs["target"] = obj["target"]
        if "hops" in _PHASE_FIELDS[phase]:
            hops = need("hops")
            if not isinstance(hops, int) or isinstance(hops, bool):
                raise ContractError("hops must be an integer")
            kwargs["hops"] = hops
        if "options" in _PHASE_FIELDS[phase]:
            raw = need("options")
            if not isinstance(raw, list) or not raw:
                raise ContractError("options must be a non-empty list")
            kwargs["options"] = tuple(_decode_option(o) for o in raw)
        if "selected" in _PHASE_FIELDS[phase]:
            kwargs["selected"] = _decode_option(need("selected"))
        if "reason" in _PHASE_FIELDS[phase]:
            if not isinstance(need("reason"), str):
                raise ContractError("reason must be a string")
            kwargs["reason"] = obj["reason"]
        try:
            return cls(**kwargs)
        except ContractError:
            raise
        except Exception as exc:
            raise ContractError(str(exc)) from None

    def encode(self) -> bytes:
        data = canonical.dumps(self.to_json())
        if len(data) > framing.MAX_CONTRACT_SIZE:
            raise ContractError("contract exceeds the 1 MiB limit")
        return data


def decode_contract(body: object) -> Contract:
    contract = Contract.from_json(body)
    if len(contract.encode()) > framing.MAX_CONTRACT_SIZE:
        raise ContractError("contract exceeds the 1 MiB limit")
    return contract


# --- convenience constructors --------------------------------------------

def request_contract(
    resource: str,
    target: str,
    hops: int = MAX_HOPS,
    session_id: Optional[str] = None,
    nonce: Optional[str] = None,
) -> Contract:
    return Contract(
        phase=ContractPhase.REQUEST,
        session_id=session_id or fresh_session_id(),
        nonce=nonce or fresh_nonce(),
        resource=resource,
        target=target,
        hops=hops,
    )


def _reply(base: Contract, phase: ContractPhase, **kwargs) -> Contract:
    return Contract(
        phase=phase, session_id=base.session_id, nonce=base.nonce, **kwargs
    )


# --- outcomes -------------------------------------------------------------

@dataclass(frozen=True)
class Agreed:
    option: Option
    session_id: str
    nonce: str
    resource: str


@dataclass(frozen=True)
class Failed:
    reason: str


@dataclass(frozen=True)
class Deferred:
    target_am: str
    hops_remaining: int


Outcome = Union[Agreed, Failed, Deferred]


@dataclass(frozen=True)
class PeerIdentity:
    """What the transport layer knows about the party on the channel."""

    name: str
    strength: IdentityStrength


def appraiser_decide(
    policy: SelectionPolicy,
    request: Contract,
    target_identity: PeerIdentity,
) -> Union[Fail, Strengthen, Defer, Offer]:
    """The appraiser's pre-wire decision for an incoming request."""
    if request.phase is not ContractPhase.REQUEST:
        raise ProtocolViolation(f"expected a request contract, got {request.phase.value}")
    ctx = PolicyContext(
        role=Role.APPRAISER,
        peer_identity=target_identity.name,
        identity_strength=target_identity.strength,
        resource=request.resource,
        phase=Phase.INITIAL,
    )
    return evaluate(policy, ctx)


def _recv_contract(channel) -> Contract:
    return decode_contract(channel.recv())


def pre_wire_outcome(
    policy: SelectionPolicy,
    request: Contract,
    attester: PeerIdentity,
) -> Optional[Outcome]:
    """Resolve the request as far as policy allows without a connection.

    Fail, Defer and Strengthen all conclude before any message is sent;
    an Offer needs the wire, signalled here by returning None. A daemon
    uses this to decide whether dialing the attester is warranted at all.
    """
    action = appraiser_decide(policy, request, attester)
    if isinstance(action, Fail):
        return Failed(action.reason)
    if isinstance(action, Defer):
        hops = request.hops if request.hops is not None else MAX_HOPS
        if hops <= 0:
            return Failed("defer chain exhausted its hop budget")
        return Deferred(action.target_am, hops - 1)
    if isinstance(action, Strengthen):
        if attester.strength >= action.min_strength:
            # already strong enough: re-ask with nothing left to strengthen
            return Failed(
                "policy demands strengthening but the identity already meets it"
            )
        return Failed(f"strengthen:{action.min_strength.label}")
    return None


def appraiser_negotiate(
    channel,
    policy: SelectionPolicy,
    registry: Registry,
    request: Contract,
    attester: PeerIdentity,
) -> Outcome:
    """Drive the appraiser half over an open channel to the attester."""
    early = pre_wire_outcome(policy, request, attester)
    if early is not None:
        return early
    action = appraiser_decide(policy, request, attester)

    offered = registry_filter(action.options, registry)
    if not offered:
        return Failed("policy offers nothing this registry can execute")

    initial = _reply(
        request,
        ContractPhase.INITIAL,
        resource=request.resource,
        options=tuple(offered),
    )
    channel.send(initial.to_json())

    try:
        answer = _recv_contract(channel)
    except ContractError as exc:
        return Failed(f"attester sent an invalid contract: {exc}")

    if answer.phase is ContractPhase.REFUSAL:
        if (answer.session_id, answer.nonce) != (request.session_id, request.nonce):
            return Failed("refusal echo mismatch")
        return Failed(answer.reason)
    if answer.phase is not ContractPhase.COUNTER:
        refusal = _reply(request, ContractPhase.REFUSAL,
                         reason=f"protocol violation: {answer.phase.value} after initial")
        channel.send(refusal.to_json())
        return Failed(f"attester answered an initial with {answer.phase.value}")
    if (answer.session_id, answer.nonce) != (request.session_id, request.nonce):
        refusal = _reply(request, ContractPhase.REFUSAL, reason="echo mismatch")
        channel.send(refusal.to_json())
        return Failed("counter did not echo the session id and nonce")
    if not set(answer.options) <= set(initial.options):
        refusal = _reply(request, ContractPhase.REFUSAL,
                         reason="counter is not a subset of the offered options")
        channel.send(refusal.to_json())
        return Failed("counter is not a subset of the offered options")

    ctx = PolicyContext(
        role=Role.APPRAISER,
        peer_identity=attester.name,
        identity_strength=attester.strength,
        resource=request.resource,
        phase=Phase.FINAL,
    )
    try:
        selected = choose_preferred(policy, ctx, answer.options)
    except Exception:
        refusal = _reply(request, ContractPhase.REFUSAL,
                         reason="no counter-offer element is acceptable")
        channel.send(refusal.to_json())
        return Failed("no counter-offer element is acceptable")

    selection = _reply(request, ContractPhase.SELECTION, selected=selected)
    channel.send(selection.to_json())
    return Agreed(
        option=selected,
        session_id=request.session_id,
        nonce=request.nonce,
        resource=request.resource,
    )


def attester_negotiate(
    channel,
    policy: SelectionPolicy,
    registry: Registry,
    initial: Contract,
    appraiser: PeerIdentity,
) -> Outcome:
    """Drive the attester half, given the already-received initial."""
    if initial.phase is not ContractPhase.INITIAL:
        refusal = Contract(
            phase=ContractPhase.REFUSAL,
            session_id=initial.session_id,
            nonce=initial.nonce,
            reason=f"expected an initial contract, got {initial.phase.value}",
        )
        channel.send(refusal.to_json())
        return Failed(f"session opened with {initial.phase.value}, not initial")

    ctx = PolicyContext(
        role=Role.ATTESTER,
        peer_identity=appraiser.name,
        identity_strength=appraiser.strength,
        resource=initial.resource,
        phase=Phase.COUNTER,
    )
    action = evaluate(policy, ctx)
    if isinstance(action, Fail):
        channel.send(_reply(initial, ContractPhase.REFUSAL, reason=action.reason).to_json())
        return Failed(action.reason)
    if isinstance(action, Strengthen):
        reason = f"strengthen:{action.min_strength.label}"
        channel.send(_reply(initial, ContractPhase.REFUSAL, reason=reason).to_json())
        return Failed(reason)
    if isinstance(action, Defer):
        reason = "attester policy cannot defer"
        channel.send(_reply(initial, ContractPhase.REFUSAL, reason=reason).to_json())
        return Failed(reason)

    acceptable = filter_options(policy, ctx, initial.options)
    acceptable = registry_filter(acceptable, registry)
    if not acceptable:
        reason = "no offered option is acceptable here"
        channel.send(_reply(initial, ContractPhase.REFUSAL, reason=reason).to_json())
        return Failed(reason)

    counter = _reply(initial, ContractPhase.COUNTER, options=tuple(acceptable))
    channel.send(counter.to_json())

    try:
        answer = _recv_contract(channel)
    except ContractError as exc:
        return Failed(f"appraiser sent an invalid contract: {exc}")

    if answer.phase is ContractPhase.REFUSAL:
        return Failed(answer.reason)
    if answer.phase is not ContractPhase.SELECTION:
        reason = f"protocol violation: {answer.phase.value} after counter"
        channel.send(_reply(initial, ContractPhase.REFUSAL, reason=reason).to_json())
        return Failed(reason)
    if (answer.session_id, answer.nonce) != (initial.session_id, initial.nonce):
        reason = "selection did not echo the session id and nonce"
        channel.send(_reply(initial, ContractPhase.REFUSAL, reason=reason).to_json())
        return Failed(reason)
    if answer.selected not in counter.options:
        reason = "selection is not drawn from the counter-offer"
        channel.send(_reply(initial, ContractPhase.REFUSAL, reason=reason).to_json())
        return Failed(reason)

    return Agreed(
        option=answer.selected,
        session_id=initial.session_id,
        nonce=initial.nonce,
        resource=initial.resource,
    )
