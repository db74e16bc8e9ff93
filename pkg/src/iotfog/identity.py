"""Node identities, Ed25519 signatures, SHA-256 hashing and the canonical
transaction encoding.

Every hash and signature in the system is computed over the byte layouts
defined here, so two runs with the same seeds agree bit for bit.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

if TYPE_CHECKING:
    from iotfog.ledger import Transaction

DIGEST_SIZE = 32
KEY_SIZE = 32
SIGNATURE_SIZE = 64
TX_VERSION = 0x01
TX_HEADER_SIZE = 1 + KEY_SIZE + 8 + 8 + 4
MAX_PAYLOAD = 2**32 - 1

Digest = bytes
Signature = bytes


def sha256(data: bytes) -> Digest:
    """SHA-256 of ``data`` as 32 raw bytes."""
    return hashlib.sha256(data).digest()


@lru_cache(maxsize=4096)
def _private_key(secret: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret)


@lru_cache(maxsize=4096)
def _public_key(public: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public)


def _derive_public(secret: bytes) -> bytes:
    return _private_key(secret).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


@dataclass(frozen=True)
class NodeKeyPair:
    """An Ed25519 signing key and its public half.

    The public key is the node's identity everywhere in the system.
    """

    secret: bytes
    public: bytes

    def __post_init__(self) -> None:
        if len(self.secret) != KEY_SIZE or len(self.public) != KEY_SIZE:
            raise ValueError("keys must be 32 bytes")
        if _derive_public(self.secret) != self.public:
            raise ValueError("public key does not match secret key")

    def __repr__(self) -> str:
        return f"NodeKeyPair(public={self.public.hex()[:16]}...)"


def generate_keypair(seed: int) -> NodeKeyPair:
    """Deterministic keypair from a 64-bit seed (secret = SHA-256 of the seed, LE)."""
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    secret = sha256(struct.pack("<Q", seed))
    return NodeKeyPair(secret=secret, public=_derive_public(secret))


def sign(key: NodeKeyPair, message: bytes) -> Signature:
    return _private_key(key.secret).sign(message)


@lru_cache(maxsize=1 << 16)
def verify(public: bytes, message: bytes, sig: bytes) -> bool:
    """True iff ``sig`` is a valid signature by ``public`` over ``message``.

    Malformed keys or signatures verify as False instead of raising.
    """
    if len(public) != KEY_SIZE or len(sig) != SIGNATURE_SIZE:
        return False
    try:
        _public_key(bytes(public)).verify(sig, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def encode_transaction(tx: Transaction) -> bytes:
    """Canonical signing bytes of a transaction (signature excluded).

    Layout: version(1) | author(32) | nonce(8 LE) | timestamp ms(8 LE) |
    payload length(4 LE) | payload.
    """
    return encode_transaction_fields(tx.author, tx.nonce, tx.timestamp, tx.payload)


def encode_transaction_fields(author: bytes, nonce: int, timestamp: int, payload: bytes) -> bytes:
    if len(author) != KEY_SIZE:
        raise ValueError("author must be a 32-byte public key")
    if len(payload) > MAX_PAYLOAD:
        raise ValueError("payload too large")
    return struct.pack("<B32sQQI", TX_VERSION, author, nonce, timestamp, len(payload)) + payload
