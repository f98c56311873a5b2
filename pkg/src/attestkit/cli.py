"""Command-line front end for the attestation manager.

    am serve       --config FILE          run the manager daemon
    am request     --target T --resource R [--am ENDPOINT]
    am register    METADATA_FILE          add a component to the store
    am deregister  UUID                   remove one (cascades validity)
    am list        [--pairs]              show components / usable pairs
    am init        provision a fresh component store
    am revalidate  re-run the validity fixpoint after repairs
    am baseline    record local golden state for later appraisals

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
Store-touching commands find the store via --store or $ATTESTKIT_STORE;
``am request`` finds its local manager via --am or $ATTESTKIT_AM.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
from pathlib import Path

from . import baseline, mspec
from .am import AttestationManager, load_config, request_attestation
from .asps.local import LocalExecutor
from .errors import AttestKitError
from .graph import graph_from_eval
from .registry import ComponentMetadata, valid_pairs
from .store import Store, install_builtins

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class CliParser(argparse.ArgumentParser):
    """argparse with the documented usage exit status (1, not 2)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _store_from(args) -> Store:
    root = args.store or os.environ.get("ATTESTKIT_STORE")
    if not root:
        raise AttestKitError("no store given: pass --store or set ATTESTKIT_STORE")
    return Store(root)


def _require_initialized(store: Store) -> Store:
    if not store.exists():
        raise AttestKitError(f"no component store at {store.root} (run `am init` first)")
    return store


# --- subcommands -----------------------------------------------------------

def _cmd_serve(args) -> int:
    manager = AttestationManager(load_config(args.config))
    signal.signal(signal.SIGTERM, lambda *_sig: manager.stop())
    cfg = manager.config
    endpoints = [e for e in (cfg.listen_tcp and f"tcp:{cfg.listen_tcp}",
                             cfg.listen_unix and f"unix:{cfg.listen_unix}") if e]
    print(f"{cfg.name}: listening on {', '.join(endpoints)}", flush=True)
    manager.serve_forever()
    return EXIT_OK


def _cmd_request(args) -> int:
    endpoint = args.am or os.environ.get("ATTESTKIT_AM")
    if not endpoint:
        raise AttestKitError("no manager endpoint: pass --am or set ATTESTKIT_AM")
    envelope = request_attestation(
        endpoint, args.resource, args.target,
        hops=args.hops, timeout=args.timeout,
    )
    if args.json:
        envelope.pop("report_obj", None)
        print(json.dumps(envelope, indent=2, sort_keys=True))
        return EXIT_OK
    report = envelope["report_obj"]
    print(f"verdict: {report.verdict.value}")
    for finding in report.findings:
        where = f" (node {finding.node_id})" if finding.node_id is not None else ""
        print(f"  [{finding.severity.value}]{where} {finding.text}")
    for key in ("report_blob", "bundle_blob"):
        if envelope.get(key):
            print(f"{key.replace('_', ' ')}: {envelope[key]}")
    return EXIT_OK


def _cmd_register(args) -> int:
    store = _require_initialized(_store_from(args))
    try:
        obj = json.loads(Path(args.metadata).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AttestKitError(f"cannot read metadata file: {exc}") from None
    meta = ComponentMetadata.from_json(obj)
    spec_text = Path(args.spec_text).read_text() if args.spec_text else None
    store.add_component(meta, spec_text=spec_text)
    print(f"registered {meta.kind.value} {meta.uuid} ({meta.name})")
    return EXIT_OK


def _cmd_deregister(args) -> int:
    store = _require_initialized(_store_from(args))
    _registry, invalidated = store.remove_component(args.uuid)
    print(f"deregistered {args.uuid}")
    for uuid in sorted(invalidated):
        print(f"  invalidated dependent {uuid}")
    return EXIT_OK


def _cmd_list(args) -> int:
    store = _require_initialized(_store_from(args))
    registry = store.load_registry()
    if args.pairs:
        for apb_uuid, spec_uuid in sorted(valid_pairs(registry)):
            print(f"{apb_uuid}  {spec_uuid}")
        return EXIT_OK
    for uuid in sorted(registry.components):
        meta = registry.get(uuid)
        state = "valid" if registry.is_valid(uuid) else "invalid"
        print(f"{uuid}  {meta.kind.value:16s}  {state:7s}  {meta.name}")
    return EXIT_OK


def _cmd_init(args) -> int:
    store = _store_from(args)
    key_id = store.init()
    roots = tuple(p for p in (args.roots or "").split(",") if p) or ("/etc",)
    install_builtins(store, readable_roots=roots,
                     with_system_specs=not args.no_system_specs)
    print(f"store initialized at {store.root}")
    print(f"identity key id: {key_id}")
    return EXIT_OK


def _cmd_revalidate(args) -> int:
    store = _require_initialized(_store_from(args))
    _registry, revived = store.revalidate()
    if revived:
        for uuid in sorted(revived):
            print(f"revived {uuid}")
    else:
        print("nothing to revive")
    return EXIT_OK


def _cmd_baseline(args) -> int:
    store = _require_initialized(_store_from(args))
    spec = store.load_spec(args.spec)
    nonce = bytes.fromhex(args.nonce) if args.nonce else b"\x00" * 32
    nodes = mspec.evaluate(spec, LocalExecutor(args.workspace))
    graph = graph_from_eval(nodes, args.spec, args.target, nonce)
    count = baseline.append_records(
        store.baseline_path, baseline.records_from_graph(graph))
    print(f"recorded {count} baseline entries from {len(graph.nodes)} nodes")
    return EXIT_OK


# --- wiring ----------------------------------------------------------------

def build_parser() -> CliParser:
    parser = CliParser(prog="am", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def with_store(p):
        p.add_argument("--store", help="component store directory "
                                       "(default: $ATTESTKIT_STORE)")
        return p

    p = sub.add_parser("serve", help="run the manager daemon")
    p.add_argument("--config", required=True, help="manager config file (JSON)")
    p.set_defaults(run=_cmd_serve)

    p = sub.add_parser("request", help="ask a manager to appraise a target")
    p.add_argument("--target", required=True,
                   help="attester: a configured peer name or tcp:host:port")
    p.add_argument("--resource", required=True, help="resource name to evaluate")
    p.add_argument("--am", help="local manager endpoint (default: $ATTESTKIT_AM)")
    p.add_argument("--hops", type=int, default=4, help="deferral hop budget")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--json", action="store_true", help="print the raw envelope")
    p.set_defaults(run=_cmd_request)

    p = with_store(sub.add_parser("register", help="add a component"))
    p.add_argument("metadata", help="component metadata JSON file")
    p.add_argument("--spec-text", help="program text file (measurement specs)")
    p.set_defaults(run=_cmd_register)

    p = with_store(sub.add_parser("deregister", help="remove a component"))
    p.add_argument("uuid")
    p.set_defaults(run=_cmd_deregister)

    p = with_store(sub.add_parser("list", help="show registered components"))
    p.add_argument("--pairs", action="store_true",
                   help="show usable (bundling executable, spec) pairs instead")
    p.set_defaults(run=_cmd_list)

    p = with_store(sub.add_parser("init", help="provision a fresh store"))
    p.add_argument("--roots", help="comma-separated roots measurement may read "
                                   "(default: /etc)")
    p.add_argument("--no-system-specs", action="store_true",
                   help="skip the shipped system integrity specs")
    p.set_defaults(run=_cmd_init)

    p = with_store(sub.add_parser("revalidate", help="re-run validity fixpoint"))
    p.set_defaults(run=_cmd_revalidate)

    p = with_store(sub.add_parser("baseline", help="record local golden state"))
    p.add_argument("--spec", required=True, help="measurement spec uuid")
    p.add_argument("--target", required=True,
                   help="identity the baseline describes (attester name)")
    p.add_argument("--nonce", help="session nonce as hex (default: zeros)")
    p.add_argument("--workspace", default=".", help="evaluation working directory")
    p.set_defaults(run=_cmd_baseline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except (AttestKitError, OSError) as exc:
        print(f"am: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
