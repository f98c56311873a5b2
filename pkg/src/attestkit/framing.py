"""Length-prefixed JSON frames.

All wire traffic in this toolkit — AM-to-AM negotiation, APB evidence
transfer, and the ASP child stdin/stdout exchange — uses the same frame:
a 4-byte big-endian payload length followed by a canonical JSON body.

Two transports are wrapped here: sockets (:class:`Channel`) and plain
binary streams (:func:`read_stream_frame` / :func:`write_stream_frame`)
for child-process pipes.
"""

from __future__ import annotations

import socket
import struct
from typing import Any, BinaryIO, Optional

from . import canonical
from .errors import ChannelTimeout, FrameError

HEADER = struct.Struct("!I")
HEADER_SIZE = HEADER.size

# Upper bound on any frame this implementation will read. Individual
# message kinds enforce tighter caps (contracts: 1 MiB) on top of this.
MAX_FRAME_SIZE = 64 * 1024 * 1024

# Messages that take part in negotiation must stay small; the cap is
# enforced at decode time by the contract layer.
MAX_CONTRACT_SIZE = 1024 * 1024

DEFAULT_MESSAGE_TIMEOUT = 10.0


def encode_frame(body: Any) -> bytes:
    """Encode ``body`` (a JSON-serializable value) as one frame."""
    payload = canonical.dumps(body)
    if len(payload) > MAX_FRAME_SIZE:
        raise FrameError(f"frame payload of {len(payload)} bytes exceeds cap")
    return HEADER.pack(len(payload)) + payload


def decode_payload(payload: bytes) -> Any:
    try:
        return canonical.loads(payload)
    except (ValueError, UnicodeDecodeError) as exc:
        raise FrameError(f"frame body is not valid JSON: {exc}") from None


# --- stream (pipe) transport ----------------------------------------------

def read_stream_frame(stream: BinaryIO, max_size: int = MAX_FRAME_SIZE) -> Any:
    """Read one frame from a blocking binary stream.

    Raises FrameError on EOF, a short read, or an oversized length.
    """
    header = stream.read(HEADER_SIZE)
    if header is None or len(header) == 0:
        raise FrameError("stream closed before a frame header")
    if len(header) < HEADER_SIZE:
        raise FrameError("truncated frame header")
    (length,) = HEADER.unpack(header)
    if length > max_size:
        raise FrameError(f"declared frame length {length} exceeds cap {max_size}")
    payload = b""
    while len(payload) < length:
        chunk = stream.read(length - len(payload))
        if not chunk:
            raise FrameError("stream closed mid-frame")
        payload += chunk
    return decode_payload(payload)


def write_stream_frame(stream: BinaryIO, body: Any) -> None:
    stream.write(encode_frame(body))
    stream.flush()


# --- socket transport -----------------------------------------------------

def _recv_exact(sock: socket.socket, count: int) -> bytes:
    buf = b""
    while len(buf) < count:
        try:
            chunk = sock.recv(count - len(buf))
        except socket.timeout:
            raise ChannelTimeout("no complete frame within the message timeout") from None
        if not chunk:
            if buf:
                raise FrameError("peer closed the connection mid-frame")
            raise FrameError("peer closed the connection")
        buf += chunk
    return buf


class Channel:
    """A framed message channel over a connected socket.

    ``timeout`` is the per-message receive timeout; sends use the same
    bound. The channel never interprets bodies beyond JSON decoding.
    """

    def __init__(self, sock: socket.socket, timeout: float = DEFAULT_MESSAGE_TIMEOUT):
        self._sock = sock
        self.timeout = timeout
        sock.settimeout(timeout)

    def fileno(self) -> int:
        return self._sock.fileno()

    @property
    def socket(self) -> socket.socket:
        return self._sock

    def send(self, body: Any) -> None:
        self._sock.sendall(encode_frame(body))

    def send_raw(self, frame: bytes) -> None:
        """Relay an already-encoded frame verbatim (proxy path)."""
        self._sock.sendall(frame)

    def recv(self, max_size: int = MAX_FRAME_SIZE) -> Any:
        return decode_payload(self.recv_raw(max_size))

    def recv_raw(self, max_size: int = MAX_FRAME_SIZE) -> bytes:
        """Receive one frame and return its payload bytes undecoded."""
        header = _recv_exact(self._sock, HEADER_SIZE)
        (length,) = HEADER.unpack(header)
        if length > max_size:
            raise FrameError(f"declared frame length {length} exceeds cap {max_size}")
        if length == 0:
            return b""
        return _recv_exact(self._sock, length)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self) -> "Channel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def channel_pair(timeout: float = DEFAULT_MESSAGE_TIMEOUT) -> tuple[Channel, Channel]:
    """An in-process connected channel pair (tests, local loopback)."""
    left, right = socket.socketpair()
    return Channel(left, timeout), Channel(right, timeout)


def connect_tcp(host: str, port: int, timeout: float = DEFAULT_MESSAGE_TIMEOUT) -> Channel:
    sock = socket.create_connection((host, port), timeout=timeout)
    return Channel(sock, timeout)


def connect_unix(path: str, timeout: float = DEFAULT_MESSAGE_TIMEOUT) -> Channel:
    sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    sock.settimeout(timeout)
    sock.connect(path)
    return Channel(sock, timeout)


def parse_endpoint(text: str) -> tuple[str, int]:
    """Split ``host:port`` into its parts; IPv6 literals use brackets."""
    if text.startswith("["):
        host, _, rest = text[1:].partition("]")
        if not rest.startswith(":"):
            raise ValueError(f"malformed endpoint {text!r}")
        port_text = rest[1:]
    else:
        host, sep, port_text = text.rpartition(":")
        if not sep:
            raise ValueError(f"malformed endpoint {text!r}")
    try:
        port = int(port_text)
    except ValueError:
        raise ValueError(f"malformed endpoint {text!r}") from None
    if not (0 <= port <= 65535):
        raise ValueError(f"port out of range in {text!r}")
    return host, port


def format_endpoint(host: str, port: int) -> str:
    if ":" in host:
        return f"[{host}]:{port}"
    return f"{host}:{port}"
