"""Consensus message types and their tagged wire encodings.

Every message is a one-byte type tag followed by its fields in declaration
order, integers little-endian, signatures last.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from iotfog._codec import DecodeError, Reader
from iotfog.identity import DIGEST_SIZE, KEY_SIZE, SIGNATURE_SIZE, NodeKeyPair, sign, verify
from iotfog.ledger import Block, Transaction

TAG_PROPOSAL = 0x10
TAG_VOTE = 0x11
TAG_CERTIFICATE = 0x12
TAG_VIEW_CHANGE = 0x13
TAG_TRANSACTION = 0x14
CONSENSUS_TAGS = frozenset({TAG_PROPOSAL, TAG_VOTE, TAG_CERTIFICATE, TAG_VIEW_CHANGE, TAG_TRANSACTION})

VOTE_BODY_SIZE = KEY_SIZE + DIGEST_SIZE + 8 + 4 + SIGNATURE_SIZE


def quorum(n: int) -> int:
    """Distinct signers needed to commit among ``n`` peers: 2*floor((n-1)/3) + 1."""
    return 2 * ((n - 1) // 3) + 1


def max_faulty(n: int) -> int:
    return (n - 1) // 3


def rotate_leader(peers: tuple[bytes, ...] | list[bytes], height: int, view: int) -> bytes:
    """Round-robin leader over the sorted peer list."""
    if not peers:
        raise ValueError("empty peer list")
    return peers[(height + view) % len(peers)]


def _round_bytes(block_hash: bytes, height: int, view: int) -> bytes:
    return block_hash + struct.pack("<QI", height, view)


@dataclass(frozen=True)
class Proposal:
    block: Block
    height: int
    view: int
    leader_signature: bytes

    def signing_bytes(self) -> bytes:
        return _round_bytes(self.block.hash, self.height, self.view)

    def encode(self) -> bytes:
        return (
            bytes([TAG_PROPOSAL])
            + self.block.encode()
            + struct.pack("<QI", self.height, self.view)
            + self.leader_signature
        )

    @classmethod
    def create(cls, block: Block, view: int, leader: NodeKeyPair) -> Proposal:
        sig = sign(leader, _round_bytes(block.hash, block.height, view))
        return cls(block, block.height, view, sig)


@dataclass(frozen=True)
class Vote:
    voter: bytes
    block_hash: bytes
    height: int
    view: int
    signature: bytes

    def signing_bytes(self) -> bytes:
        return _round_bytes(self.block_hash, self.height, self.view)

    def is_valid(self) -> bool:
        return verify(self.voter, self.signing_bytes(), self.signature)

    def body(self) -> bytes:
        return (
            self.voter
            + self.block_hash
            + struct.pack("<QI", self.height, self.view)
            + self.signature
        )

    def encode(self) -> bytes:
        return bytes([TAG_VOTE]) + self.body()

    @classmethod
    def create(cls, key: NodeKeyPair, block_hash: bytes, height: int, view: int) -> Vote:
        sig = sign(key, _round_bytes(block_hash, height, view))
        return cls(key.public, block_hash, height, view, sig)

    @classmethod
    def read(cls, reader: Reader) -> Vote:
        voter = reader.take(KEY_SIZE)
        block_hash = reader.take(DIGEST_SIZE)
        height, view = reader.u64(), reader.u32()
        return cls(voter, block_hash, height, view, reader.take(SIGNATURE_SIZE))


@dataclass(frozen=True)
class CommitCertificate:
    """Quorum of matching votes, shipped together with the block they commit
    so that lagging peers and observers can append it directly."""

    block_hash: bytes
    height: int
    view: int
    votes: tuple[Vote, ...]
    block: Block

    def encode(self) -> bytes:
        return b"".join(
            [
                bytes([TAG_CERTIFICATE]),
                self.block_hash,
                struct.pack("<QII", self.height, self.view, len(self.votes)),
                *(v.body() for v in self.votes),
                self.block.encode(),
            ]
        )

    def problem(self, peers: tuple[bytes, ...] | frozenset[bytes]) -> str | None:
        """Why this certificate is unacceptable for ``peers``, or None."""
        if self.block.hash != self.block_hash or self.block.height != self.height:
            return "block does not match certificate"
        voters = set()
        for v in self.votes:
            if (v.block_hash, v.height, v.view) != (self.block_hash, self.height, self.view):
                return "vote for a different round"
            if v.voter not in peers:
                return "vote from a non-peer"
            if not v.is_valid():
                return "bad vote signature"
            voters.add(v.voter)
        if len(voters) < quorum(len(peers)):
            return f"{len(voters)} distinct voters, quorum is {quorum(len(peers))}"
        return None


@dataclass(frozen=True)
class ViewChange:
    voter: bytes
    height: int
    view: int
    signature: bytes

    def signing_bytes(self) -> bytes:
        return self.voter + struct.pack("<QI", self.height, self.view)

    def is_valid(self) -> bool:
        return verify(self.voter, self.signing_bytes(), self.signature)

    def encode(self) -> bytes:
        return bytes([TAG_VIEW_CHANGE]) + self.signing_bytes() + self.signature

    @classmethod
    def create(cls, key: NodeKeyPair, height: int, view: int) -> ViewChange:
        sig = sign(key, key.public + struct.pack("<QI", height, view))
        return cls(key.public, height, view, sig)


Message = Proposal | Vote | CommitCertificate | ViewChange | Transaction


def encode_message(msg: Message) -> bytes:
    if isinstance(msg, Transaction):
        return bytes([TAG_TRANSACTION]) + msg.encode()
    return msg.encode()


def decode_message(data: bytes) -> Message:
    """Parse a tagged consensus message; raises DecodeError on malformed input."""
    if not data:
        raise DecodeError("empty message")
    reader = Reader(data, 1)
    tag = data[0]
    msg: Message
    if tag == TAG_PROPOSAL:
        block = Block.read(reader)
        height, view = reader.u64(), reader.u32()
        msg = Proposal(block, height, view, reader.take(SIGNATURE_SIZE))
    elif tag == TAG_VOTE:
        msg = Vote.read(reader)
    elif tag == TAG_CERTIFICATE:
        block_hash = reader.take(DIGEST_SIZE)
        height, view, count = reader.u64(), reader.u32(), reader.u32()
        if count * VOTE_BODY_SIZE > reader.remaining():
            raise DecodeError("vote count exceeds message size")
        votes = tuple(Vote.read(reader) for _ in range(count))
        msg = CommitCertificate(block_hash, height, view, votes, Block.read(reader))
    elif tag == TAG_VIEW_CHANGE:
        voter = reader.take(KEY_SIZE)
        height, view = reader.u64(), reader.u32()
        msg = ViewChange(voter, height, view, reader.take(SIGNATURE_SIZE))
    elif tag == TAG_TRANSACTION:
        msg = Transaction.read(reader)
    else:
        raise DecodeError(f"unknown consensus tag {tag:#04x}")
    reader.finish()
    return msg
