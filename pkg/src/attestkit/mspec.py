"""Measurement specifications: what to measure, driven by guarded rules.

A spec is written in a small guarded-clause language::

    measure p :: path
      | is_reg p = sha1sum p
      | is_dir p = dirlist p >>= measure
      otherwise = success
    do measure ("/etc" :: path)

Each instruction declares the variable type it handles and a top-down
guard ladder. A clause's action either records evidence (``feat v``),
records evidence and feeds every variable the ASP produced back into
another instruction (``feat v >>= next``), or records a bare success
leaf (``success``). The ``do`` block seeds the work list.

Evaluation is a FIFO obligation queue with a seen-set keyed on
(instruction name, variable identity): work discovered at runtime (a
directory's entries, say) joins the same queue, each obligation is
discharged at most once, and the result is an evidence DAG whose edges
run from the producing node to each node it caused. The queue
discipline is observable only as node numbering — FIFO and LIFO yield
the same node set — which the test suite holds as an invariant.

Guard predicates and ASP features are both supplied by an
:class:`Executor`, so this module never touches the filesystem itself;
symlink handling, for instance, lives entirely in the executor's
predicates (``is_reg``/``is_dir`` answer about the link itself, so
symlinks fall through to ``otherwise`` and are never followed).

Bind chains (``f v >>= g >>= h``) are accepted as an extension and
desugared into synthetic intermediate instructions with a wildcard
parameter type.
"""

from __future__ import annotations

import re
import uuid as uuid_mod
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Protocol, Union

from .errors import (
    CompositionError,
    SpecSyntaxError,
    SpecValidationError,
    UnknownAspFeatureError,
    UnknownPredicateError,
)
from .registry import check_uuid

WILDCARD_TYPE = "*"

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class MeasurementVariable:
    """A typed address naming one thing on the target."""

    vtype: str
    address: str

    def to_json(self) -> dict:
        return {"vtype": self.vtype, "address": self.address}

    @classmethod
    def from_json(cls, obj: dict) -> "MeasurementVariable":
        return cls(vtype=obj["vtype"], address=obj["address"])


@dataclass(frozen=True)
class Invoke:
    """Run an ASP feature on the variable and record its evidence."""

    asp_feature: str


@dataclass(frozen=True)
class Bind:
    """Run an ASP feature, then route every produced variable onward."""

    asp_feature: str
    then: str  # instruction name


@dataclass(frozen=True)
class Success:
    """Record a bare success leaf; produces no evidence data."""


Action = Union[Invoke, Bind, Success]

OTHERWISE = "otherwise"


@dataclass(frozen=True)
class Clause:
    """``| predicate v = action`` — or the otherwise fallback."""

    predicate: str  # OTHERWISE for the fallback clause
    action: Action

    @property
    def is_otherwise(self) -> bool:
        return self.predicate == OTHERWISE


@dataclass(frozen=True)
class Instruction:
    name: str
    parameter: str
    target_type: str
    clauses: tuple[Clause, ...]

    def __post_init__(self):
        if not self.clauses:
            raise SpecValidationError(f"instruction {self.name!r} has no clauses")
        for i, clause in enumerate(self.clauses):
            if clause.is_otherwise and i != len(self.clauses) - 1:
                raise SpecValidationError(
                    f"instruction {self.name!r}: otherwise must be the last clause"
                )
        if sum(1 for c in self.clauses if c.is_otherwise) > 1:
            raise SpecValidationError(
                f"instruction {self.name!r} has more than one otherwise clause"
            )


Entry = tuple[str, MeasurementVariable]  # (instruction name, seed variable)


@dataclass(frozen=True)
class MeasurementSpec:
    uuid: str
    instructions: dict[str, Instruction]
    entry: tuple[Entry, ...]

    def __post_init__(self):
        check_uuid(self.uuid)
        for name, instruction in self.instructions.items():
            if name != instruction.name:
                raise SpecValidationError(
                    f"instruction table key {name!r} != instruction name {instruction.name!r}"
                )
            for clause in instruction.clauses:
                if isinstance(clause.action, Bind) and clause.action.then not in self.instructions:
                    raise SpecValidationError(
                        f"instruction {name!r} binds into unknown instruction {clause.action.then!r}"
                    )
        for entry_name, _ in self.entry:
            if entry_name not in self.instructions:
                raise SpecValidationError(f"entry names unknown instruction {entry_name!r}")


# --- parsing --------------------------------------------------------------

_HEADER_RE = re.compile(r"^(?P<name>\S+)\s+(?P<param>\S+)\s*::\s*(?P<type>\S+)$")
_DO_RE = re.compile(
    r'^do\s+(?P<name>\S+)\s*\(\s*"(?P<addr>(?:[^"\\]|\\.)*)"\s*::\s*(?P<type>[^)\s]+)\s*\)$'
)


def _check_name(name: str, what: str, line_no: int) -> str:
    if not _NAME_RE.match(name):
        raise SpecSyntaxError(f"invalid {what} name {name!r}", line_no)
    return name


def _unescape(text: str) -> str:
    return text.replace('\\"', '"').replace("\\\\", "\\")


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


class _InstructionBuilder:
    def __init__(self, name: str, parameter: str, target_type: str, line_no: int):
        self.name = name
        self.parameter = parameter
        self.target_type = target_type
        self.line_no = line_no
        self.clauses: list[Clause] = []


def _parse_action(
    text: str, parameter: str, line_no: int, synthetic: list[_InstructionBuilder], host: str
) -> Action:
    text = text.strip()
    if text == "success":
        return Success()
    stages = [part.strip() for part in text.split(">>=")]
    first = stages[0].split()
    if len(first) != 2:
        raise SpecSyntaxError(
            f"expected 'feature {parameter}' in action, got {stages[0]!r}", line_no
        )
    feature, applied = first
    _check_name(feature, "ASP feature", line_no)
    if applied != parameter:
        raise SpecSyntaxError(
            f"action applies {applied!r} but the instruction parameter is {parameter!r}",
            line_no,
        )
    if len(stages) == 1:
        return Invoke(feature)
    for stage in stages[1:]:
        _check_name(stage, "instruction", line_no)
    if len(stages) == 2:
        return Bind(feature, stages[1])
    # Chain extension: f v >>= g >>= h desugars to f v >>= <synthetic>,
    # where the synthetic instruction forwards any variable into g >>= h.
    tail_first, tail_rest = stages[1], stages[2:]
    synth_name = f"{host}_chain{len(synthetic)}"
    inner_action: Action
    if len(tail_rest) == 1:
        inner_action = Bind(tail_first, tail_rest[0])
    else:
        inner_text = " ".join([f"{tail_first} w"] + [">>= " + s for s in tail_rest])
        inner_action = _parse_action(inner_text, "w", line_no, synthetic, host)
    builder = _InstructionBuilder(synth_name, "w", WILDCARD_TYPE, line_no)
    builder.clauses.append(Clause(OTHERWISE, inner_action))
    synthetic.append(builder)
    return Bind(feature, synth_name)


def parse_spec(
    text: str,
    spec_uuid: Optional[str] = None,
    known_predicates: Optional[Iterable[str]] = None,
) -> MeasurementSpec:
    """Parse measurement-spec text.

    ``known_predicates``, when given, turns an unrecognized guard
    predicate into a parse error; by default predicate names are only
    checked at evaluation time (they belong to the executor).
    """
    predicates = set(known_predicates) if known_predicates is not None else None
    builders: list[_InstructionBuilder] = []
    synthetic: list[_InstructionBuilder] = []
    entries: list[Entry] = []
    current: Optional[_InstructionBuilder] = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue

        if line.startswith("do ") or line == "do":
            match = _DO_RE.match(line)
            if not match:
                raise SpecSyntaxError(
                    'malformed entry, expected: do name ("address" :: type)', line_no
                )
            name = _check_name(match.group("name"), "instruction", line_no)
            entries.append(
                (name, MeasurementVariable(match.group("type"), _unescape(match.group("addr"))))
            )
            current = None
            continue

        if line.startswith("|") or line.startswith(OTHERWISE):
            if current is None:
                raise SpecSyntaxError("clause outside any instruction", line_no)
            body = line[1:].strip() if line.startswith("|") else line
            if body.startswith(OTHERWISE):
                rest = body[len(OTHERWISE) :].strip()
                if not rest.startswith("="):
                    raise SpecSyntaxError("otherwise clause is missing '='", line_no)
                action = _parse_action(
                    rest[1:], current.parameter, line_no, synthetic, current.name
                )
                current.clauses.append(Clause(OTHERWISE, action))
                continue
            head, sep, action_text = body.partition("=")
            if not sep:
                raise SpecSyntaxError("clause is missing '='", line_no)
            parts = head.split()
            if len(parts) != 2:
                raise SpecSyntaxError(
                    f"expected '| predicate {current.parameter} = action'", line_no
                )
            predicate, applied = parts
            _check_name(predicate, "predicate", line_no)
            if predicate == OTHERWISE:
                raise SpecSyntaxError("'otherwise' cannot take a variable", line_no)
            if predicates is not None and predicate not in predicates:
                raise SpecSyntaxError(f"unknown guard predicate {predicate!r}", line_no)
            if applied != current.parameter:
                raise SpecSyntaxError(
                    f"guard tests {applied!r} but the instruction parameter is "
                    f"{current.parameter!r}",
                    line_no,
                )
            action = _parse_action(
                action_text, current.parameter, line_no, synthetic, current.name
            )
            current.clauses.append(Clause(predicate, action))
            continue

        match = _HEADER_RE.match(line)
        if match:
            name = _check_name(match.group("name"), "instruction", line_no)
            param = _check_name(match.group("param"), "parameter", line_no)
            current = _InstructionBuilder(name, param, match.group("type"), line_no)
            builders.append(current)
            continue

        raise SpecSyntaxError(f"unrecognized line {line!r}", line_no)

    instructions: dict[str, Instruction] = {}
    for builder in builders + synthetic:
        if builder.name in instructions:
            raise SpecSyntaxError(
                f"instruction {builder.name!r} defined twice", builder.line_no
            )
        if not builder.clauses:
            raise SpecSyntaxError(
                f"instruction {builder.name!r} has no clauses", builder.line_no
            )
        instructions[builder.name] = Instruction(
            name=builder.name,
            parameter=builder.parameter,
            target_type=builder.target_type,
            clauses=tuple(builder.clauses),
        )
    if not entries:
        raise SpecSyntaxError("spec has no 'do' entries", max(1, text.count("\n") + 1))

    try:
        return MeasurementSpec(
            uuid=spec_uuid or str(uuid_mod.uuid4()),
            instructions=instructions,
            entry=tuple(entries),
        )
    except SpecValidationError as exc:
        raise SpecSyntaxError(str(exc), 1) from None


def _render_action(action: Action, parameter: str) -> str:
    if isinstance(action, Success):
        return "success"
    if isinstance(action, Invoke):
        return f"{action.asp_feature} {parameter}"
    if isinstance(action, Bind):
        return f"{action.asp_feature} {parameter} >>= {action.then}"
    raise TypeError(f"not an action: {action!r}")


def render_spec(spec: MeasurementSpec) -> str:
    """Render to spec text. parse(render(s)) is structurally equal to s
    (modulo the uuid, which rides outside the text)."""
    lines = []
    for name in spec.instructions:
        instruction = spec.instructions[name]
        lines.append(f"{instruction.name} {instruction.parameter} :: {instruction.target_type}")
        for clause in instruction.clauses:
            if clause.is_otherwise:
                lines.append(f"  otherwise = {_render_action(clause.action, instruction.parameter)}")
            else:
                lines.append(
                    f"  | {clause.predicate} {instruction.parameter} = "
                    f"{_render_action(clause.action, instruction.parameter)}"
                )
    for name, variable in spec.entry:
        lines.append(f'do {name} ("{_escape(variable.address)}" :: {variable.vtype})')
    return "\n".join(lines) + "\n"


def load_spec(path, spec_uuid: Optional[str] = None) -> MeasurementSpec:
    from pathlib import Path

    return parse_spec(Path(path).read_text(encoding="utf-8"), spec_uuid=spec_uuid)


# --- composition ----------------------------------------------------------

def _rewrite_instruction(instruction: Instruction, renames: dict[str, str]) -> Instruction:
    clauses = []
    for clause in instruction.clauses:
        action = clause.action
        if isinstance(action, Bind) and action.then in renames:
            action = Bind(action.asp_feature, renames[action.then])
        clauses.append(Clause(clause.predicate, action))
    return Instruction(
        name=renames.get(instruction.name, instruction.name),
        parameter=instruction.parameter,
        target_type=instruction.target_type,
        clauses=tuple(clauses),
    )


def _bodies_equal(a: Instruction, b: Instruction) -> bool:
    return (
        a.parameter == b.parameter
        and a.target_type == b.target_type
        and a.clauses == b.clauses
    )


def compose(a: MeasurementSpec, b: MeasurementSpec) -> MeasurementSpec:
    """Union of instructions, concatenation of entries.

    A name defined identically in both specs is shared — that is what
    makes composed specs deduplicate overlapping work at evaluation
    time. A name defined differently gets ``b``'s version renamed with
    ``b``'s uuid as a suffix (with every reference inside ``b``
    rewritten); a collision that survives even that is an error.

    The composite's uuid is derived deterministically from the parts.
    """
    renames: dict[str, str] = {}
    for name, b_ins in b.instructions.items():
        a_ins = a.instructions.get(name)
        if a_ins is not None and not _bodies_equal(a_ins, b_ins):
            renamed = f"{name}_{b.uuid.replace('-', '')}"
            if renamed in a.instructions or renamed in b.instructions:
                raise CompositionError(
                    f"instruction name {name!r} collides and the renamed form "
                    f"{renamed!r} is also taken"
                )
            renames[name] = renamed

    instructions = dict(a.instructions)
    for name, b_ins in b.instructions.items():
        rewritten = _rewrite_instruction(b_ins, renames)
        instructions[rewritten.name] = rewritten

    entry = tuple(a.entry) + tuple(
        (renames.get(name, name), variable) for name, variable in b.entry
    )
    composite_uuid = str(uuid_mod.uuid5(uuid_mod.NAMESPACE_OID, f"{a.uuid}+{b.uuid}"))
    return MeasurementSpec(uuid=composite_uuid, instructions=instructions, entry=entry)


# --- evaluation -----------------------------------------------------------

@dataclass(frozen=True)
class AspOutcome:
    """What running one ASP feature against one variable yielded."""

    data: bytes = b""
    media_type: str = "application/octet-stream"
    produced: tuple[MeasurementVariable, ...] = ()


class Executor(Protocol):
    """The environment a spec is evaluated against.

    ``predicate`` answers guard questions; ``invoke`` runs an ASP
    feature. Unknown names must raise :class:`UnknownPredicateError` /
    :class:`UnknownAspFeatureError` (hard errors); any other exception
    from ``invoke`` is recorded as an error node and evaluation
    continues.
    """

    def predicate(self, name: str, variable: MeasurementVariable) -> bool:
        ...

    def invoke(self, feature: str, variable: MeasurementVariable) -> AspOutcome:
        ...


@dataclass
class EvalNode:
    """One discharged obligation, before graph assembly."""

    node_id: int
    variable: MeasurementVariable
    asp_feature: str
    media_type: str
    data: bytes
    parent_edges: frozenset[int]
    error_detail: Optional[str] = None


SUCCESS_FEATURE = "success"


def evaluate(
    spec: MeasurementSpec,
    executor: Executor,
    discipline: str = "fifo",
) -> list[EvalNode]:
    """Discharge the spec's obligations against ``executor``.

    Returns evaluation nodes with dense ids in discharge order.
    ``discipline`` selects the queue order ("fifo" is the contract;
    "lifo" exists so tests can show the node *set* is order-independent).
    """
    if discipline not in ("fifo", "lifo"):
        raise ValueError(f"unknown queue discipline {discipline!r}")

    queue: list[tuple[str, MeasurementVariable, Optional[int]]] = []
    seen: set[tuple[str, str, str]] = set()
    nodes: list[EvalNode] = []

    def push(name: str, variable: MeasurementVariable, parent: Optional[int]) -> None:
        key = (name, variable.vtype, variable.address)
        if key in seen:
            return
        seen.add(key)
        queue.append((name, variable, parent))

    for name, variable in spec.entry:
        push(name, variable, None)

    while queue:
        if discipline == "fifo":
            name, variable, parent = queue.pop(0)
        else:
            name, variable, parent = queue.pop()
        instruction = spec.instructions[name]
        parents = frozenset(() if parent is None else (parent,))
        node_id = len(nodes)

        if instruction.target_type != WILDCARD_TYPE and instruction.target_type != variable.vtype:
            nodes.append(
                EvalNode(
                    node_id=node_id,
                    variable=variable,
                    asp_feature="",
                    media_type="",
                    data=b"",
                    parent_edges=parents,
                    error_detail=(
                        f"type mismatch: instruction {name!r} takes "
                        f"{instruction.target_type!r}, got {variable.vtype!r}"
                    ),
                )
            )
            continue

        fired: Optional[Clause] = None
        for clause in instruction.clauses:
            if clause.is_otherwise:
                fired = clause
                break
            if executor.predicate(clause.predicate, variable):
                fired = clause
                break
        if fired is None:
            nodes.append(
                EvalNode(
                    node_id=node_id,
                    variable=variable,
                    asp_feature="",
                    media_type="",
                    data=b"",
                    parent_edges=parents,
                    error_detail=f"no clause of {name!r} matched and there is no otherwise",
                )
            )
            continue

        action = fired.action
        if isinstance(action, Success):
            nodes.append(
                EvalNode(
                    node_id=node_id,
                    variable=variable,
                    asp_feature=SUCCESS_FEATURE,
                    media_type="",
                    data=b"",
                    parent_edges=parents,
                )
            )
            continue

        try:
            outcome = executor.invoke(action.asp_feature, variable)
        except (UnknownAspFeatureError, UnknownPredicateError):
            raise
        except Exception as exc:  # executor failure -> error node, keep going
            nodes.append(
                EvalNode(
                    node_id=node_id,
                    variable=variable,
                    asp_feature=action.asp_feature,
                    media_type="",
                    data=b"",
                    parent_edges=parents,
                    error_detail=str(exc) or exc.__class__.__name__,
                )
            )
            continue

        nodes.append(
            EvalNode(
                node_id=node_id,
                variable=variable,
                asp_feature=action.asp_feature,
                media_type=outcome.media_type,
                data=outcome.data,
                parent_edges=parents,
            )
        )
        if isinstance(action, Bind):
            for produced in outcome.produced:
                push(action.then, produced, node_id)

    return nodes
