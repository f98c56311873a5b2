"""Identity keys and trust anchors.

One modern signature scheme is used throughout: Ed25519 over the
SHA-256 digest of the covered bytes. Signer identity is a short key id
derived from the public key; an appraiser's trust-anchor directory maps
key ids back to principal names via the anchor file stem
(``anchors/<name>.pem``).

The cryptography import is deliberately local to the functions that
need it — ASP child processes that never sign or verify should not pay
its import cost on every spawn.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional

from .errors import UnknownSignerError


def generate_identity(private_path: str | Path) -> str:
    """Create a fresh identity key; writes PEM private key and a
    sibling ``.pub.pem`` public key. Returns the key id."""
    from cryptography.hazmat.primitives import serialization
    from cryptography.hazmat.primitives.asymmetric import ed25519

    private_path = Path(private_path)
    key = ed25519.Ed25519PrivateKey.generate()
    private_path.parent.mkdir(parents=True, exist_ok=True)
    private_path.write_bytes(
        key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
    )
    private_path.chmod(0o600)
    public_pem = key.public_key().public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    public_path(private_path).write_bytes(public_pem)
    return key_id_of(key.public_key())


def public_path(private_path: str | Path) -> Path:
    private_path = Path(private_path)
    name = private_path.name
    if name.endswith(".pem"):
        name = name[: -len(".pem")]
    return private_path.with_name(name + ".pub.pem")


def load_private(path: str | Path):
    from cryptography.hazmat.primitives import serialization

    return serialization.load_pem_private_key(Path(path).read_bytes(), password=None)


def load_public(path: str | Path):
    from cryptography.hazmat.primitives import serialization

    return serialization.load_pem_public_key(Path(path).read_bytes())


def key_id_of(public_key) -> str:
    """Short stable identifier for a public key."""
    from cryptography.hazmat.primitives import serialization

    raw = public_key.public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return hashlib.sha256(raw).digest()[:16].hex()


def sign_digest(private_key, covered: bytes) -> bytes:
    """Sign sha256(covered) with Ed25519."""
    return private_key.sign(hashlib.sha256(covered).digest())


def verify_digest(public_key, signature: bytes, covered: bytes) -> bool:
    from cryptography.exceptions import InvalidSignature

    try:
        public_key.verify(signature, hashlib.sha256(covered).digest())
        return True
    except InvalidSignature:
        return False


class TrustAnchors:
    """A directory of ``<name>.pem`` public keys, indexed by key id."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._by_id: dict[str, tuple[str, object]] = {}
        if self.directory.is_dir():
            for entry in sorted(self.directory.glob("*.pem")):
                try:
                    public = load_public(entry)
                except (ValueError, OSError):
                    continue
                name = entry.name[: -len(".pem")]
                if name.endswith(".pub"):
                    name = name[: -len(".pub")]
                self._by_id[key_id_of(public)] = (name, public)

    def resolve(self, key_id: str):
        """Return the public key for ``key_id`` or raise UnknownSignerError."""
        try:
            return self._by_id[key_id][1]
        except KeyError:
            raise UnknownSignerError(key_id) from None

    def name_of(self, key_id: str) -> Optional[str]:
        entry = self._by_id.get(key_id)
        return entry[0] if entry else None

    def key_ids(self) -> list[str]:
        return sorted(self._by_id)
