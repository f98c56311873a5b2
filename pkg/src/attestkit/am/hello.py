"""Mutual key-bound identification.

A plain unix-socket peer is transport-authenticated by the host and a
tcp peer is anonymous; either side can be lifted to key-bound strength
by this three-frame exchange, run before any contract traffic:

    A -> B   hello        {name, key_id, challenge}
    B -> A   hello        {name, key_id, challenge, proof over A's challenge}
    A -> B   hello-proof  {proof over B's challenge}

Each proof is an Ed25519 signature over the peer's challenge bytes and
is checked against the local trust-anchor directory: the signing key
must be anchored *and* anchored under the name the peer claimed.
"""

from __future__ import annotations

import secrets

from .. import keys
from ..errors import SessionError
from ..framing import Channel
from ..policy import IdentityStrength
from ..negotiation import PeerIdentity

_CHALLENGE_BYTES = 32


def _check_hello(body: object, *, want_proof: bool) -> dict:
    if not isinstance(body, dict) or body.get("type") != "hello":
        raise SessionError("peer did not answer the identification hello")
    required = {"type", "name", "key_id", "challenge"} | ({"proof"} if want_proof else set())
    if set(body) != required:
        raise SessionError("malformed hello frame")
    if not all(isinstance(body[k], str) and body[k] for k in required if k != "type"):
        raise SessionError("malformed hello frame")
    return body


def _verify_proof(anchors: keys.TrustAnchors, body: dict, proof_hex: str, challenge: bytes) -> str:
    """Check a proof against our anchors; returns the verified peer name."""
    anchored_name = anchors.name_of(body["key_id"])
    if anchored_name is None:
        raise SessionError(f"peer key {body['key_id']} is not anchored here")
    if anchored_name != body["name"]:
        raise SessionError(
            f"peer claims to be {body['name']!r} but its key is anchored as {anchored_name!r}"
        )
    try:
        proof = bytes.fromhex(proof_hex)
    except ValueError:
        raise SessionError("malformed hello proof") from None
    if not keys.verify_digest(anchors.resolve(body["key_id"]), proof, challenge):
        raise SessionError("hello proof failed signature verification")
    return anchored_name


def initiate_hello(channel: Channel, name: str, private_key, anchors: keys.TrustAnchors) -> PeerIdentity:
    """Run the handshake as the connecting side; returns the peer's
    verified identity at key-bound strength or raises SessionError."""
    challenge = secrets.token_bytes(_CHALLENGE_BYTES)
    channel.send({
        "type": "hello",
        "name": name,
        "key_id": keys.key_id_of(private_key.public_key()),
        "challenge": challenge.hex(),
    })
    reply = _check_hello(channel.recv(), want_proof=True)
    peer_name = _verify_proof(anchors, reply, reply["proof"], challenge)
    try:
        peer_challenge = bytes.fromhex(reply["challenge"])
    except ValueError:
        raise SessionError("malformed hello challenge") from None
    channel.send({
        "type": "hello-proof",
        "proof": keys.sign_digest(private_key, peer_challenge).hex(),
    })
    return PeerIdentity(peer_name, IdentityStrength.KEY_BOUND)


def answer_hello(channel: Channel, opening: dict, name: str, private_key,
                 anchors: keys.TrustAnchors) -> PeerIdentity:
    """Run the handshake as the accepting side. ``opening`` is the hello
    frame that already arrived."""
    opening = _check_hello(opening, want_proof=False)
    try:
        peer_challenge = bytes.fromhex(opening["challenge"])
    except ValueError:
        raise SessionError("malformed hello challenge") from None
    challenge = secrets.token_bytes(_CHALLENGE_BYTES)
    channel.send({
        "type": "hello",
        "name": name,
        "key_id": keys.key_id_of(private_key.public_key()),
        "challenge": challenge.hex(),
        "proof": keys.sign_digest(private_key, peer_challenge).hex(),
    })
    final = channel.recv()
    if not isinstance(final, dict) or final.get("type") != "hello-proof" \
            or set(final) != {"type", "proof"} or not isinstance(final.get("proof"), str):
        raise SessionError("peer did not complete the identification hello")
    peer_name = _verify_proof(anchors, opening, final["proof"], challenge)
    return PeerIdentity(peer_name, IdentityStrength.KEY_BOUND)
