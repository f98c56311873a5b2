"""The attestation manager daemon.

One manager process plays both negotiation roles. Inbound connections
are classified by their opening frame:

* a ``request`` contract — a requester (or an upstream manager relaying
  a deferred request) wants this manager to appraise a target;
* an ``initial`` contract — a remote appraiser opens an attestation
  session against this host;
* a ``hello`` frame — the peer wants key-bound identification before
  its initial contract.

The manager itself only negotiates, brokers and audits. Once a session
reaches agreement, the selected attestation bundle executable runs as a
child process holding the already-connected peer socket; evidence bytes
never pass through the manager. A child that dies or misbehaves costs
exactly its own session: the manager answers with an error report and
keeps serving.
"""

from __future__ import annotations

import io
import logging
import os
import socket
import subprocess
import threading
from pathlib import Path
from typing import Optional

from .. import framing
from ..apb import ROLE_APPRAISER, ROLE_ATTESTER, ApbContext
from ..errors import AttestKitError, ConfigError, ContractError, SessionError
from ..framing import Channel
from ..keys import load_private
from ..negotiation import (
    Agreed,
    Contract,
    ContractPhase,
    Deferred,
    Failed,
    PeerIdentity,
    appraiser_negotiate,
    attester_negotiate,
    decode_contract,
    pre_wire_outcome,
)
from ..policy import IdentityStrength, load_policy
from ..report import error_report
from ..store import Store
from .config import AmConfig, connect_endpoint, endpoint_kind
from .hello import answer_hello, initiate_hello

log = logging.getLogger("attestkit.am")

_STRENGTHEN_PREFIX = "strengthen:"


class _CategoryPool:
    """Fixed pool of small integers; one is held for each live session.

    The pool is sized at configuration time to cover the session limit,
    so acquisition can only fail if accounting is broken — which is worth
    crashing loudly over rather than running a session uncategorised.
    """

    def __init__(self, size: int):
        self._free = list(range(size))
        self._lock = threading.Lock()

    def take(self) -> int:
        with self._lock:
            if not self._free:
                raise RuntimeError("category pool exhausted despite session cap")
            return self._free.pop(0)

    def give(self, token: int) -> None:
        with self._lock:
            self._free.append(token)


def _audit(workspace: Path, line: str) -> None:
    with open(workspace / "process_audit.log", "a") as fh:
        fh.write(line + "\n")


class AttestationManager:
    def __init__(self, config: AmConfig):
        self.config = config
        self.store = Store(config.store_root)
        if not self.store.exists():
            raise ConfigError(f"no store at {config.store_root}; initialise it first")
        self.policy = load_policy(config.policy_path)
        self._slots = threading.Semaphore(config.max_sessions)
        self._categories = _CategoryPool(config.category_pool)
        self._stop = threading.Event()
        self._listeners: list[socket.socket] = []
        self._accept_threads: list[threading.Thread] = []
        self._sessions: set[threading.Thread] = set()
        self._sessions_lock = threading.Lock()
        self._identity = None

    # --- lifecycle --------------------------------------------------------

    def start(self) -> None:
        if self.config.listen_tcp:
            host, port = framing.parse_endpoint(self.config.listen_tcp)
            sock = socket.create_server((host, port), reuse_port=False)
            self._spawn_acceptor(sock, "tcp")
        if self.config.listen_unix:
            path = Path(self.config.listen_unix)
            if path.exists():
                path.unlink()
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            sock.bind(str(path))
            sock.listen()
            self._spawn_acceptor(sock, "unix")
        log.info("%s listening (tcp=%s unix=%s)", self.config.name,
                 self.config.listen_tcp, self.config.listen_unix)

    def _spawn_acceptor(self, sock: socket.socket, kind: str) -> None:
        sock.settimeout(0.25)
        self._listeners.append(sock)
        thread = threading.Thread(
            target=self._accept_loop, args=(sock, kind),
            name=f"{self.config.name}-accept-{kind}", daemon=True,
        )
        thread.start()
        self._accept_threads.append(thread)

    def stop(self) -> None:
        self._stop.set()
        for thread in self._accept_threads:
            thread.join(timeout=2.0)
        for sock in self._listeners:
            try:
                sock.close()
            except OSError:
                pass
        with self._sessions_lock:
            live = list(self._sessions)
        for thread in live:
            thread.join(timeout=self.config.session_timeout)
        if self.config.listen_unix:
            try:
                Path(self.config.listen_unix).unlink()
            except OSError:
                pass

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop.wait(0.5):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def __enter__(self) -> "AttestationManager":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    # --- connection intake ------------------------------------------------

    def _accept_loop(self, listener: socket.socket, kind: str) -> None:
        while not self._stop.is_set():
            try:
                sock, _addr = listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            thread = threading.Thread(
                target=self._serve_connection, args=(sock, kind),
                name=f"{self.config.name}-session", daemon=True,
            )
            with self._sessions_lock:
                self._sessions.add(thread)
            thread.start()

    def _transport_identity(self, kind: str, sock: socket.socket) -> PeerIdentity:
        if kind == "unix":
            # the host's credentials gate who may connect to the socket
            return PeerIdentity("local", IdentityStrength.TRANSPORT_AUTHENTICATED)
        try:
            host, port = sock.getpeername()[:2]
            name = framing.format_endpoint(host, port)
        except OSError:
            name = "unknown"
        return PeerIdentity(name, IdentityStrength.ANONYMOUS)

    def _serve_connection(self, sock: socket.socket, kind: str) -> None:
        channel = Channel(sock, self.config.connect_timeout)
        try:
            self._dispatch(channel, kind)
        except AttestKitError as exc:
            log.warning("session ended with error: %s", exc)
        except Exception:
            log.exception("unhandled session failure")
        finally:
            channel.close()
            with self._sessions_lock:
                self._sessions.discard(threading.current_thread())

    def _dispatch(self, channel: Channel, kind: str) -> None:
        peer = self._transport_identity(kind, channel.socket)
        try:
            first = channel.recv(framing.MAX_CONTRACT_SIZE)
        except AttestKitError:
            return
        if isinstance(first, dict) and first.get("type") == "hello":
            try:
                peer = answer_hello(channel, first, self.config.name,
                                    self._private_key(), self.store.anchors())
            except AttestKitError as exc:
                log.warning("hello from %s failed: %s", peer.name, exc)
                return
            try:
                first = channel.recv(framing.MAX_CONTRACT_SIZE)
            except AttestKitError:
                return
        try:
            contract = decode_contract(first)
        except ContractError as exc:
            channel.send({"type": "error", "error": str(exc)})
            return
        if contract.phase is ContractPhase.REQUEST:
            self._serve_appraisal(channel, contract)
        elif contract.phase is ContractPhase.INITIAL:
            self._serve_attestation(channel, contract, peer)
        else:
            channel.send({
                "type": "error",
                "error": f"a session cannot open with a {contract.phase.value} contract",
            })

    # --- capacity ---------------------------------------------------------

    def _acquire_slot(self) -> bool:
        if self.config.overflow == "refuse":
            return self._slots.acquire(blocking=False)
        return self._slots.acquire(timeout=self.config.queue_timeout)

    # --- appraiser side ---------------------------------------------------

    def _serve_appraisal(self, client: Channel, request: Contract) -> None:
        if not self._acquire_slot():
            self._send_error_envelope(client, request, "manager is at session capacity")
            return
        token = self._categories.take()
        try:
            self._run_appraisal(client, request, token)
        finally:
            self._categories.give(token)
            self._slots.release()

    def _run_appraisal(self, client: Channel, request: Contract, token: int) -> None:
        registry = self.store.load_registry()
        try:
            endpoint, peer_name = self._resolve_target(request.target)
        except SessionError:
            endpoint, peer_name = None, request.target

        # Policy speaks before any route is needed: a purely-deferring
        # manager never has to know how to reach the target itself.
        strength = (IdentityStrength.TRANSPORT_AUTHENTICATED
                    if endpoint is not None and endpoint_kind(endpoint) == "unix"
                    else IdentityStrength.ANONYMOUS)
        early = pre_wire_outcome(self.policy, request, PeerIdentity(peer_name, strength))
        if isinstance(early, Deferred):
            self._proxy_deferred(client, request, early)
            return
        if isinstance(early, Failed) and not self._wants_strengthen(
            early, PeerIdentity(peer_name, strength)
        ):
            self._send_error_envelope(client, request, early.reason)
            return
        if endpoint is None:
            self._send_error_envelope(client, request, f"no route to target {request.target!r}")
            return

        upstream: Optional[Channel] = None
        try:
            upstream, peer, outcome = self._negotiate_with(endpoint, peer_name, request, registry)
            if isinstance(outcome, Deferred):
                if upstream:
                    upstream.close()
                    upstream = None
                self._proxy_deferred(client, request, outcome)
                return
            if isinstance(outcome, Failed):
                self._send_error_envelope(client, request, outcome.reason)
                return
            assert isinstance(outcome, Agreed)
            result = self._spawn_apb(
                ROLE_APPRAISER, outcome, upstream, registry, token,
                target_identity=request.target, peer_name=peer.name,
            )
            self._send_report_envelope(client, request, result)
        except AttestKitError as exc:
            log.warning("appraisal session %s failed: %s", request.session_id, exc)
            self._send_error_envelope(client, request, str(exc))
        finally:
            if upstream is not None:
                upstream.close()

    def _resolve_target(self, target: str) -> tuple[str, str]:
        """Map a request's target onto (endpoint, peer name)."""
        if target in self.config.peers:
            return self.config.peers[target], target
        if target.startswith(("tcp:", "unix:")):
            return target, target
        raise SessionError(f"no route to target {target!r}")

    def _negotiate_with(self, endpoint: str, peer_name: str, request: Contract, registry):
        """Negotiate with the attester, upgrading to a key-bound channel
        once if either side's policy demands a stronger identity."""
        strength = (IdentityStrength.TRANSPORT_AUTHENTICATED
                    if endpoint_kind(endpoint) == "unix"
                    else IdentityStrength.ANONYMOUS)
        peer = PeerIdentity(peer_name, strength)
        early = pre_wire_outcome(self.policy, request, peer)
        if early is not None and not self._wants_strengthen(early, peer):
            return None, peer, early
        channel = None
        if early is None:
            channel = connect_endpoint(endpoint, self.config.connect_timeout)
            outcome = appraiser_negotiate(channel, self.policy, registry, request, peer)
            if not self._wants_strengthen(outcome, peer):
                return channel, peer, outcome
            channel.close()
        # one retry on a fresh connection, strengthened by the mutual hello
        channel = connect_endpoint(endpoint, self.config.connect_timeout)
        try:
            peer = initiate_hello(channel, self.config.name,
                                  self._private_key(), self.store.anchors())
        except AttestKitError:
            channel.close()
            raise
        if peer.name != peer_name:
            channel.close()
            raise SessionError(
                f"dialed {peer_name!r} but the peer proved to be {peer.name!r}"
            )
        outcome = appraiser_negotiate(channel, self.policy, registry, request, peer)
        return channel, peer, outcome

    @staticmethod
    def _wants_strengthen(outcome, peer: PeerIdentity) -> bool:
        return (isinstance(outcome, Failed)
                and outcome.reason.startswith(_STRENGTHEN_PREFIX)
                and peer.strength < IdentityStrength.KEY_BOUND)

    def _proxy_deferred(self, client: Channel, request: Contract, deferred: Deferred) -> None:
        """Relay the request to another manager and pump its answer back
        byte-for-byte, so the report envelope survives unaltered."""
        try:
            endpoint, _name = self._resolve_target(deferred.target_am)
        except SessionError as exc:
            self._send_error_envelope(client, request, str(exc))
            return
        if endpoint in self.config.own_endpoints() or deferred.target_am == self.config.name:
            self._send_error_envelope(
                client, request, "policy defers this request to the deferring manager itself"
            )
            return
        forwarded = Contract(
            phase=ContractPhase.REQUEST,
            session_id=request.session_id,
            nonce=request.nonce,
            resource=request.resource,
            target=request.target,
            hops=deferred.hops_remaining,
        )
        try:
            upstream = connect_endpoint(endpoint, self.config.connect_timeout)
        except OSError as exc:
            self._send_error_envelope(client, request, f"defer target unreachable: {exc}")
            return
        try:
            upstream.socket.settimeout(self.config.session_timeout)
            upstream.send(forwarded.to_json())
            payload = upstream.recv_raw()
            client.send_raw(framing.HEADER.pack(len(payload)) + payload)
        except AttestKitError as exc:
            self._send_error_envelope(client, request, f"deferred session failed: {exc}")
        finally:
            upstream.close()

    # --- attester side ----------------------------------------------------

    def _serve_attestation(self, channel: Channel, initial: Contract, peer: PeerIdentity) -> None:
        if not self._acquire_slot():
            refusal = Contract(
                phase=ContractPhase.REFUSAL, session_id=initial.session_id,
                nonce=initial.nonce, reason="manager is at session capacity",
            )
            channel.send(refusal.to_json())
            return
        token = self._categories.take()
        try:
            registry = self.store.load_registry()
            outcome = attester_negotiate(channel, self.policy, registry, initial, peer)
            if isinstance(outcome, Failed):
                log.info("attestation session %s refused: %s",
                         initial.session_id, outcome.reason)
                return
            assert isinstance(outcome, Agreed)
            result = self._spawn_apb(
                ROLE_ATTESTER, outcome, channel, registry, token,
                target_identity=self.config.name, peer_name=peer.name,
            )
            if not result.get("ok", False):
                log.warning("attester child for session %s reported failure: %s",
                            initial.session_id, result.get("detail"))
        except AttestKitError as exc:
            log.warning("attestation session %s failed: %s", initial.session_id, exc)
        finally:
            self._categories.give(token)
            self._slots.release()

    # --- child processes --------------------------------------------------

    def _spawn_apb(self, role: str, agreed: Agreed, channel: Channel, registry,
                   token: int, target_identity: str, peer_name: str) -> dict:
        apb_uuid, spec_uuid = agreed.option
        meta = registry.get(apb_uuid)
        style = _style_of(meta)
        workspace_key = f"{agreed.session_id}-{role}"
        workspace = self.store.new_workspace(workspace_key)
        try:
            return self._drive_apb(role, agreed, channel, meta, style, workspace, token,
                                   target_identity, peer_name)
        finally:
            if not self.config.keep_workspaces:
                try:
                    self.store.drop_workspace(workspace_key)
                except OSError:
                    log.warning("could not remove workspace %s", workspace)

    def _drive_apb(self, role: str, agreed: Agreed, channel: Channel, meta, style: str,
                   workspace, token: int, target_identity: str, peer_name: str) -> dict:
        apb_uuid, spec_uuid = agreed.option
        fd = channel.fileno()
        os.set_inheritable(fd, True)
        ctx = ApbContext(
            role=role,
            store_root=str(self.store.root),
            workspace=str(workspace),
            session_id=agreed.session_id,
            nonce=agreed.nonce,
            apb_uuid=apb_uuid,
            spec_uuid=spec_uuid,
            style=style,
            channel_fd=fd,
            target_identity=target_identity,
            peer_name=peer_name,
            categories=(token,),
            asp_timeout=self.config.asp_timeout,
            trace_dir=self.config.trace_dir,
            trace_file=self.config.trace_file,
        )
        try:
            proc = subprocess.Popen(
                [meta.executable],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                pass_fds=(fd,),
                cwd=workspace,
            )
        except OSError as exc:
            raise SessionError(f"cannot launch the agreed executable: {exc}") from None
        _audit(workspace, f"apb {proc.pid} {role}")
        # Drop the parent's copy of the peer socket at once: the child owns
        # it now, and if the child dies the peer should see EOF, not a hang.
        try:
            channel.socket.close()
        except OSError:
            pass
        try:
            out, err = proc.communicate(
                framing.encode_frame(ctx.to_json()), timeout=self.config.session_timeout
            )
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.communicate()
            raise SessionError("attestation child exceeded the session timeout") from None
        if proc.returncode != 0:
            tail = err.decode("utf-8", "replace").strip().splitlines()[-1:] or ["(no stderr)"]
            raise SessionError(
                f"attestation child exited with status {proc.returncode}: {tail[0]}"
            )
        try:
            result = framing.read_stream_frame(io.BytesIO(out))
        except AttestKitError:
            raise SessionError("attestation child produced no result frame") from None
        if not isinstance(result, dict):
            raise SessionError("attestation child produced a malformed result")
        return result

    # --- client replies ---------------------------------------------------

    def _send_report_envelope(self, client: Channel, request: Contract, result: dict) -> None:
        if result.get("type") != "apb-report" or "report" not in result:
            self._send_error_envelope(client, request, "appraisal produced no report")
            return
        client.send({
            "type": "report",
            "session_id": request.session_id,
            "nonce": request.nonce,
            "resource": request.resource,
            "target": request.target,
            "report": result["report"],
            "report_blob": result.get("report_blob"),
            "bundle_blob": result.get("bundle_blob"),
        })

    def _send_error_envelope(self, client: Channel, request: Contract, reason: str) -> None:
        report = error_report(reason)
        try:
            blob = self.store.put_blob(report.serialize())
        except OSError:
            blob = None
        try:
            client.send({
                "type": "report",
                "session_id": request.session_id,
                "nonce": request.nonce,
                "resource": request.resource,
                "target": request.target,
                "report": report.to_json(),
                "report_blob": blob,
                "bundle_blob": None,
            })
        except AttestKitError:
            pass

    # --- helpers ----------------------------------------------------------

    def _private_key(self):
        if self._identity is None:
            self._identity = load_private(self.store.identity_path)
        return self._identity


def _style_of(meta) -> str:
    from ..apb import style_of

    style = style_of(meta)
    if style is None:
        raise SessionError(
            f"agreed bundle executable {meta.uuid} does not declare its bundling style"
        )
    return style
