"""Child-process entry point for builtin ASPs.

The generated wrapper executables call :func:`asp_main` with the one
feature they provide. Stdout carries exactly one result frame; all
human-readable noise goes to stderr so the protocol stream stays clean.
"""

from __future__ import annotations

import sys
from pathlib import Path

from .. import framing
from ..errors import AttestKitError
from . import ERROR, OK, AspRequest, AspResult
from .builtins import PROVIDERS, FunctionalError

EXIT_OK = 0
EXIT_FUNCTIONAL = 1
EXIT_PROTOCOL = 2


def asp_main(feature: str) -> int:
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    provider = PROVIDERS.get(feature)
    if provider is None:
        print(f"no builtin provider for feature {feature!r}", file=sys.stderr)
        return EXIT_PROTOCOL
    try:
        body = framing.read_stream_frame(stdin)
        request = AspRequest.from_json(body)
    except AttestKitError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    if request.function != feature:
        print(
            f"this executable provides {feature!r}, not {request.function!r}",
            file=sys.stderr,
        )
        return EXIT_PROTOCOL

    workspace = Path(request.workspace)
    try:
        outcome = provider(request.variable, workspace)
    except FunctionalError as exc:
        result = AspResult(status=ERROR, error_detail=str(exc))
        framing.write_stream_frame(stdout, result.to_json())
        return EXIT_FUNCTIONAL
    except Exception as exc:  # unexpected: still answer, then signal failure
        result = AspResult(status=ERROR, error_detail=f"{exc.__class__.__name__}: {exc}")
        framing.write_stream_frame(stdout, result.to_json())
        return EXIT_FUNCTIONAL

    result = AspResult(
        status=OK,
        media_type=outcome.media_type,
        evidence=outcome.data,
        produced_variables=outcome.produced,
    )
    framing.write_stream_frame(stdout, result.to_json())
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m attestkit.asps.runner <feature>", file=sys.stderr)
        return EXIT_PROTOCOL
    return asp_main(argv[0])


if __name__ == "__main__":
    sys.exit(main())
