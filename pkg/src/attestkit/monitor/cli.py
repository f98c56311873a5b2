"""Command-line front end for the monitoring service.

    am-monitor serve --root DIR --am ENDPOINT [--listen HOST:PORT]
                     [--token TOKEN] [--tick SECONDS]

Runs the REST API plus the periodic scheduler until interrupted.
Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import os
import signal
import sys
import threading

from ..cli import EXIT_OK, EXIT_RUNTIME, CliParser
from ..errors import AttestKitError
from .rest import MonitorApi
from .service import MonitorService


def _cmd_serve(args) -> int:
    am_endpoint = args.am or os.environ.get("ATTESTKIT_AM")
    if not am_endpoint:
        raise AttestKitError("no manager endpoint: pass --am or set ATTESTKIT_AM")
    if args.tick <= 0:
        raise AttestKitError("--tick must be positive")
    service = MonitorService(args.root, am_endpoint=am_endpoint)
    api = MonitorApi(service, listen=args.listen, token=args.token)
    stopping = threading.Event()

    def scheduler_loop() -> None:
        while not stopping.wait(args.tick):
            service.scheduler_tick()

    ticker = threading.Thread(target=scheduler_loop, name="scheduler", daemon=True)
    try:
        api.start()
        ticker.start()
        host, port = api.address
        print(f"monitor: listening on http://{host}:{port}, "
              f"manager at {am_endpoint}", flush=True)
        signal.signal(signal.SIGTERM, lambda *_sig: stopping.set())
        try:
            while not stopping.wait(0.5):
                pass
        except KeyboardInterrupt:
            pass
    finally:
        stopping.set()
        ticker.join(timeout=5)
        api.stop()
        service.close()
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="am-monitor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("serve", help="run the monitoring service")
    p.add_argument("--root", required=True, help="monitor state directory")
    p.add_argument("--am", help="local manager endpoint (default: $ATTESTKIT_AM)")
    p.add_argument("--listen", default="127.0.0.1:8760", help="HTTP bind address")
    p.add_argument("--token", help="operator token required in X-Auth-Token")
    p.add_argument("--tick", type=float, default=5.0,
                   help="scheduler wake-up period in seconds")
    p.set_defaults(run=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except (AttestKitError, OSError) as exc:
        print(f"am-monitor: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
