"""Selection policy: who gets offered what, in which order.

A policy is an ordered list of rules evaluated first-match-wins. Rules
live in a line-oriented text format:

    # comment
    role=appraiser peer=monitor-* strength>=transport-authenticated resource=fs/* \
        -> Offer(<apb-uuid>/<spec-uuid>, <apb-uuid>/<spec-uuid>)
    role=attester peer=tcp:* resource=* -> Fail("anonymous peers get nothing")
    * -> Fail("default deny")

Matchers may be omitted (omitted means "any"); ``*`` alone is the
fully-wildcard rule and the last line must be one, so no context can
fall off the end of a policy. Actions:

    Fail("reason")            refuse, with the reason echoed to the peer
    Strengthen(key-bound)     demand a stronger channel identity first
    Defer(host:port)          hand the whole session to another AM
    Offer(a/s, a2/s2, ...)    permit these (apb, spec) pairs, best first

The appraiser reads its matched Offer as a preference ranking; the
attester reads its own as the set it is willing to reveal.
"""

from __future__ import annotations

import enum
import fnmatch
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .errors import NoAcceptableOptionError, PolicySyntaxError
from .registry import Registry, check_uuid, valid_pairs


class Role(str, enum.Enum):
    APPRAISER = "appraiser"
    ATTESTER = "attester"


@enum.unique
class IdentityStrength(enum.IntEnum):
    """How well the channel pins down who the peer is. Totally ordered."""

    ANONYMOUS = 0
    TRANSPORT_AUTHENTICATED = 1
    KEY_BOUND = 2

    @property
    def label(self) -> str:
        return _STRENGTH_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "IdentityStrength":
        try:
            return _STRENGTH_BY_LABEL[label]
        except KeyError:
            raise ValueError(f"unknown identity strength {label!r}") from None


_STRENGTH_LABELS = {
    IdentityStrength.ANONYMOUS: "anonymous",
    IdentityStrength.TRANSPORT_AUTHENTICATED: "transport-authenticated",
    IdentityStrength.KEY_BOUND: "key-bound",
}
_STRENGTH_BY_LABEL = {v: k for k, v in _STRENGTH_LABELS.items()}


class Phase(str, enum.Enum):
    """Where in a negotiation a policy question is being asked."""

    INITIAL = "initial"
    COUNTER = "counter"
    FINAL = "final"


@dataclass(frozen=True)
class PolicyContext:
    role: Role
    peer_identity: str
    identity_strength: IdentityStrength
    resource: str
    phase: Phase = Phase.INITIAL


Option = tuple[str, str]  # (apb_uuid, spec_uuid)


@dataclass(frozen=True)
class Fail:
    reason: str


@dataclass(frozen=True)
class Strengthen:
    min_strength: IdentityStrength


@dataclass(frozen=True)
class Defer:
    target_am: str


@dataclass(frozen=True)
class Offer:
    options: tuple[Option, ...]

    def __post_init__(self):
        if not self.options:
            raise ValueError("an Offer must list at least one option")
        if len(set(self.options)) != len(self.options):
            raise ValueError("an Offer must not repeat options")


PolicyAction = Union[Fail, Strengthen, Defer, Offer]


@dataclass(frozen=True)
class Rule:
    """One policy line: four optional matchers and an action."""

    action: PolicyAction
    role: Optional[Role] = None
    peer_glob: Optional[str] = None
    min_strength: Optional[IdentityStrength] = None
    resource_glob: Optional[str] = None

    def matches(self, ctx: PolicyContext) -> bool:
        if self.role is not None and ctx.role is not self.role:
            return False
        if self.peer_glob is not None and not fnmatch.fnmatchcase(ctx.peer_identity, self.peer_glob):
            return False
        if self.min_strength is not None and ctx.identity_strength < self.min_strength:
            return False
        if self.resource_glob is not None and not fnmatch.fnmatchcase(ctx.resource, self.resource_glob):
            return False
        return True

    @property
    def is_catch_all(self) -> bool:
        return (
            self.role is None
            and self.peer_glob is None
            and self.min_strength is None
            and self.resource_glob is None
        )


@dataclass(frozen=True)
class SelectionPolicy:
    rules: tuple[Rule, ...]

    def __post_init__(self):
        if not self.rules:
            raise ValueError("a policy needs at least its catch-all rule")
        if not self.rules[-1].is_catch_all:
            raise ValueError("the last policy rule must be the catch-all")


def evaluate(policy: SelectionPolicy, ctx: PolicyContext) -> PolicyAction:
    """First matching rule wins; the catch-all guarantees a match."""
    for rule in policy.rules:
        if rule.matches(ctx):
            return rule.action
    raise AssertionError("unreachable: catch-all did not match")


def _permitted(policy: SelectionPolicy, ctx: PolicyContext) -> tuple[Option, ...]:
    action = evaluate(policy, ctx)
    if isinstance(action, Offer):
        return action.options
    return ()


def filter_options(
    policy: SelectionPolicy, ctx: PolicyContext, offered: Sequence[Option]
) -> list[Option]:
    """The subset of ``offered`` this policy permits, in offered order.

    Anything other than an Offer action permits nothing.
    """
    permitted = set(_permitted(policy, ctx))
    return [option for option in offered if option in permitted]


def choose_preferred(
    policy: SelectionPolicy, ctx: PolicyContext, counter: Sequence[Option]
) -> Option:
    """Pick the counter-offer element this policy ranks best.

    Rank is position in the matched Offer list (earlier is better).
    """
    permitted = _permitted(policy, ctx)
    rank = {option: i for i, option in enumerate(permitted)}
    best = None
    best_rank = None
    for option in counter:
        r = rank.get(option)
        if r is not None and (best_rank is None or r < best_rank):
            best, best_rank = option, r
    if best is None:
        raise NoAcceptableOptionError(
            "no element of the counter-offer is permitted by policy"
        )
    return best


def confirm_selection(
    policy: SelectionPolicy, ctx: PolicyContext, selected: Option
) -> bool:
    """Final gate before execution: is ``selected`` still permitted?"""
    return selected in set(_permitted(policy, ctx))


def registry_filter(options: Sequence[Option], registry: Registry) -> list[Option]:
    """Drop options this registry cannot execute, preserving order."""
    executable = valid_pairs(registry)
    return [option for option in options if option in executable]


# --- text format ----------------------------------------------------------

def _parse_action(text: str, line_no: int) -> PolicyAction:
    text = text.strip()
    open_paren = text.find("(")
    if open_paren < 0 or not text.endswith(")"):
        raise PolicySyntaxError(f"malformed action {text!r} (expected NAME(...))", line_no)
    name = text[:open_paren].strip()
    body = text[open_paren + 1 : -1].strip()
    if name == "Fail":
        if len(body) >= 2 and body[0] == '"' and body[-1] == '"':
            return Fail(body[1:-1])
        raise PolicySyntaxError('Fail takes one double-quoted reason string', line_no)
    if name == "Strengthen":
        try:
            return Strengthen(IdentityStrength.from_label(body))
        except ValueError as exc:
            raise PolicySyntaxError(str(exc), line_no) from None
    if name == "Defer":
        if not body or " " in body:
            raise PolicySyntaxError("Defer takes one host:port endpoint", line_no)
        return Defer(body)
    if name == "Offer":
        if not body:
            raise PolicySyntaxError("Offer must list at least one apb/spec pair", line_no)
        options = []
        for part in body.split(","):
            part = part.strip()
            pieces = part.split("/")
            if len(pieces) != 2:
                raise PolicySyntaxError(
                    f"malformed option {part!r} (expected apb-uuid/spec-uuid)", line_no
                )
            try:
                option = (check_uuid(pieces[0]), check_uuid(pieces[1]))
            except Exception:
                raise PolicySyntaxError(
                    f"option {part!r} is not a pair of canonical UUIDs", line_no
                ) from None
            options.append(option)
        if len(set(options)) != len(options):
            raise PolicySyntaxError("Offer repeats an option", line_no)
        return Offer(tuple(options))
    raise PolicySyntaxError(f"unknown action {name!r}", line_no)


def _parse_rule(line: str, line_no: int) -> Rule:
    head, sep, action_text = line.partition("->")
    if not sep:
        raise PolicySyntaxError("rule is missing '->'", line_no)
    action = _parse_action(action_text, line_no)
    head = head.strip()
    if head == "*":
        return Rule(action=action)
    role = peer = resource = None
    strength = None
    seen = set()
    for token in head.split():
        if "=" not in token:
            raise PolicySyntaxError(f"unrecognized matcher {token!r}", line_no)
        if token.startswith("strength>="):
            key, value = "strength", token[len("strength>=") :]
        else:
            key, _, value = token.partition("=")
        if key in seen:
            raise PolicySyntaxError(f"duplicate matcher {key!r}", line_no)
        seen.add(key)
        if key == "role":
            try:
                role = Role(value)
            except ValueError:
                raise PolicySyntaxError(f"unknown role {value!r}", line_no) from None
        elif key == "peer":
            peer = value
        elif key == "strength":
            try:
                strength = IdentityStrength.from_label(value)
            except ValueError as exc:
                raise PolicySyntaxError(str(exc), line_no) from None
        elif key == "resource":
            resource = value
        else:
            raise PolicySyntaxError(f"unrecognized matcher {key!r}", line_no)
    if not seen:
        raise PolicySyntaxError("rule has no matchers (use '*' for the catch-all)", line_no)
    return Rule(
        action=action,
        role=role,
        peer_glob=peer,
        min_strength=strength,
        resource_glob=resource,
    )


def parse_policy(text: str) -> SelectionPolicy:
    rules = []
    last_rule_line = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rules.append(_parse_rule(line, line_no))
        last_rule_line = line_no
    if not rules:
        raise PolicySyntaxError("policy has no rules", 1)
    if not rules[-1].is_catch_all:
        raise PolicySyntaxError(
            "the last rule must be the catch-all ('* -> ACTION')", last_rule_line
        )
    return SelectionPolicy(tuple(rules))


def load_policy(path) -> SelectionPolicy:
    from pathlib import Path

    return parse_policy(Path(path).read_text(encoding="utf-8"))


def _render_action(action: PolicyAction) -> str:
    if isinstance(action, Fail):
        return f'Fail("{action.reason}")'
    if isinstance(action, Strengthen):
        return f"Strengthen({action.min_strength.label})"
    if isinstance(action, Defer):
        return f"Defer({action.target_am})"
    if isinstance(action, Offer):
        return "Offer(" + ", ".join(f"{a}/{s}" for a, s in action.options) + ")"
    raise TypeError(f"not a policy action: {action!r}")


def render_policy(policy: SelectionPolicy) -> str:
    """Render back to the text format; parse(render(p)) == p."""
    lines = []
    for rule in policy.rules:
        if rule.is_catch_all:
            head = "*"
        else:
            parts = []
            if rule.role is not None:
                parts.append(f"role={rule.role.value}")
            if rule.peer_glob is not None:
                parts.append(f"peer={rule.peer_glob}")
            if rule.min_strength is not None:
                parts.append(f"strength>={rule.min_strength.label}")
            if rule.resource_glob is not None:
                parts.append(f"resource={rule.resource_glob}")
            head = " ".join(parts)
        lines.append(f"{head} -> {_render_action(rule.action)}")
    return "\n".join(lines) + "\n"
