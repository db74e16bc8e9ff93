"""Transactions, blocks and the append-only hash-chained ledger."""

from __future__ import annotations

import enum
import hashlib
import struct
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

from iotfog._codec import DecodeError, Reader
from iotfog.identity import (
    DIGEST_SIZE,
    KEY_SIZE,
    SIGNATURE_SIZE,
    TX_HEADER_SIZE,
    TX_VERSION,
    NodeKeyPair,
    encode_transaction,
    encode_transaction_fields,
    sha256,
    sign,
    verify,
)

BLOCK_VERSION = 0x01
HEADER_FORMAT = "<BQ32s32s32sQI"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)
ZERO_DIGEST = bytes(DIGEST_SIZE)
ZERO_KEY = bytes(KEY_SIZE)
ZERO_SIGNATURE = bytes(SIGNATURE_SIZE)


class TxVerdict(enum.Enum):
    VALID = "valid"
    BAD_SIGNATURE = "bad_signature"
    DUPLICATE_NONCE = "duplicate_nonce"


class BlockVerdict(enum.Enum):
    VALID = "valid"
    BAD_LINK = "bad_link"
    BAD_ROOT = "bad_root"
    BAD_PROPOSER_SIG = "bad_proposer_sig"
    BAD_TX = "bad_tx"


class InvalidBlock(ValueError):
    def __init__(self, verdict: BlockVerdict, detail: str = "") -> None:
        super().__init__(f"{verdict.value}{': ' + detail if detail else ''}")
        self.verdict = verdict


@dataclass(frozen=True)
class Transaction:
    author: bytes
    nonce: int
    timestamp: int
    payload: bytes
    signature: bytes

    def signing_bytes(self) -> bytes:
        return encode_transaction(self)

    def encode(self) -> bytes:
        """Wire form: canonical encoding followed by the 64-byte signature."""
        return self.signing_bytes() + self.signature

    @cached_property
    def hash(self) -> bytes:
        return sha256(self.encode())

    @classmethod
    def read(cls, reader: Reader) -> Transaction:
        version = reader.u8()
        if version != TX_VERSION:
            raise DecodeError(f"unknown transaction version {version}")
        author = reader.take(KEY_SIZE)
        nonce = reader.u64()
        timestamp = reader.u64()
        payload = reader.take(reader.u32())
        signature = reader.take(SIGNATURE_SIZE)
        return cls(author, nonce, timestamp, payload, signature)

    @classmethod
    def decode(cls, data: bytes) -> Transaction:
        reader = Reader(data)
        tx = cls.read(reader)
        reader.finish()
        return tx


@dataclass(frozen=True)
class BlockHeader:
    version: int
    height: int
    prev_hash: bytes
    tx_root: bytes
    proposer: bytes
    timestamp: int
    tx_count: int

    def encode(self) -> bytes:
        return struct.pack(
            HEADER_FORMAT,
            self.version,
            self.height,
            self.prev_hash,
            self.tx_root,
            self.proposer,
            self.timestamp,
            self.tx_count,
        )

    @cached_property
    def hash(self) -> bytes:
        return sha256(self.encode())

    @classmethod
    def read(cls, reader: Reader) -> BlockHeader:
        return cls(*struct.unpack(HEADER_FORMAT, reader.take(HEADER_SIZE)))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]
    proposer_signature: bytes

    @property
    def hash(self) -> bytes:
        return self.header.hash

    @property
    def height(self) -> int:
        return self.header.height

    def encode(self) -> bytes:
        return b"".join(
            [self.header.encode(), self.proposer_signature]
            + [tx.encode() for tx in self.transactions]
        )

    @classmethod
    def read(cls, reader: Reader) -> Block:
        header = BlockHeader.read(reader)
        signature = reader.take(SIGNATURE_SIZE)
        txs = tuple(Transaction.read(reader) for _ in range(header.tx_count))
        return cls(header, txs, signature)

    @classmethod
    def decode(cls, data: bytes) -> Block:
        reader = Reader(data)
        block = cls.read(reader)
        reader.finish()
        return block


def compute_tx_root(txs: Iterable[Transaction]) -> bytes:
    """SHA-256 over the concatenated transaction digests, in block order."""
    return sha256(b"".join(tx.hash for tx in txs))


GENESIS = Block(
    header=BlockHeader(
        version=BLOCK_VERSION,
        height=0,
        prev_hash=ZERO_DIGEST,
        tx_root=compute_tx_root(()),
        proposer=ZERO_KEY,
        timestamp=0,
        tx_count=0,
    ),
    transactions=(),
    proposer_signature=ZERO_SIGNATURE,
)


@dataclass(frozen=True)
class ChainState:
    """Validated chain held by one peer. Transitions return a new value."""

    blocks: tuple[Block, ...] = (GENESIS,)
    index: Mapping[tuple[bytes, int], bytes] = field(default_factory=dict)

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def head_hash(self) -> bytes:
        return self.blocks[-1].hash

    @cached_property
    def block_hashes(self) -> frozenset[bytes]:
        return frozenset(b.hash for b in self.blocks)

    def contains(self, block_hash: bytes) -> bool:
        return block_hash in self.block_hashes

    def has_nonce(self, author: bytes, nonce: int) -> bool:
        return (author, nonce) in self.index

    @property
    def tx_count(self) -> int:
        return len(self.index)


def new_transaction(key: NodeKeyPair, nonce: int, timestamp: int, payload: bytes) -> Transaction:
    signature = sign(key, encode_transaction_fields(key.public, nonce, timestamp, payload))
    return Transaction(key.public, nonce, timestamp, bytes(payload), signature)


def validate_transaction(tx: Transaction, chain: ChainState) -> TxVerdict:
    if not verify(tx.author, tx.signing_bytes(), tx.signature):
        return TxVerdict.BAD_SIGNATURE
    if chain.has_nonce(tx.author, tx.nonce):
        return TxVerdict.DUPLICATE_NONCE
    return TxVerdict.VALID


def _check_txs(txs: Sequence[Transaction], chain: ChainState) -> str | None:
    seen: set[tuple[bytes, int]] = set()
    for i, tx in enumerate(txs):
        verdict = validate_transaction(tx, chain)
        if verdict is not TxVerdict.VALID:
            return f"transaction {i}: {verdict.value}"
        if (tx.author, tx.nonce) in seen:
            return f"transaction {i}: duplicate nonce within block"
        seen.add((tx.author, tx.nonce))
    return None


def build_block(
    chain: ChainState,
    txs: Sequence[Transaction],
    proposer: NodeKeyPair,
    timestamp: int,
) -> Block:
    """Seal ``txs`` into a signed block on top of ``chain``'s tip."""
    if not txs:
        raise ValueError("cannot build an empty block")
    problem = _check_txs(txs, chain)
    if problem:
        raise ValueError(f"invalid transaction list: {problem}")
    header = BlockHeader(
        version=BLOCK_VERSION,
        height=chain.height + 1,
        prev_hash=chain.head_hash,
        tx_root=compute_tx_root(txs),
        proposer=proposer.public,
        timestamp=timestamp,
        tx_count=len(txs),
    )
    return Block(header, tuple(txs), sign(proposer, header.encode()))


def check_block(block: Block, chain: ChainState) -> tuple[BlockVerdict, str]:
    """Like :func:`validate_block` but also returns a human-readable reason."""
    h = block.header
    if h.version != BLOCK_VERSION:
        return BlockVerdict.BAD_LINK, f"unknown block version {h.version}"
    if h.height != chain.height + 1:
        return BlockVerdict.BAD_LINK, f"height {h.height}, expected {chain.height + 1}"
    if h.prev_hash != chain.head_hash:
        return BlockVerdict.BAD_LINK, "prev_hash does not match chain head"
    if h.tx_count != len(block.transactions):
        return BlockVerdict.BAD_ROOT, "tx_count does not match transaction list"
    if h.tx_root != compute_tx_root(block.transactions):
        return BlockVerdict.BAD_ROOT, "tx_root mismatch"
    if not verify(h.proposer, h.encode(), block.proposer_signature):
        return BlockVerdict.BAD_PROPOSER_SIG, "proposer signature does not verify"
    if not block.transactions:
        return BlockVerdict.BAD_TX, "empty block"
    problem = _check_txs(block.transactions, chain)
    if problem:
        return BlockVerdict.BAD_TX, problem
    return BlockVerdict.VALID, ""


def validate_block(block: Block, chain: ChainState) -> BlockVerdict:
    return check_block(block, chain)[0]


def append_block(chain: ChainState, block: Block) -> ChainState:
    """Return the successor chain; raises :class:`InvalidBlock` and leaves
    ``chain`` untouched when the block does not validate."""
    verdict, detail = check_block(block, chain)
    if verdict is not BlockVerdict.VALID:
        raise InvalidBlock(verdict, detail)
    index = dict(chain.index)
    for tx in block.transactions:
        index[(tx.author, tx.nonce)] = tx.hash
    return ChainState(blocks=chain.blocks + (block,), index=index)


class Record(NamedTuple):
    height: int
    block: Block
    tx: Transaction | None


def query_ledger(
    chain: ChainState,
    *,
    author: bytes | None = None,
    heights: tuple[int, int] | None = None,
) -> list[Record]:
    """Committed records in chain order.

    Filtering by ``author`` yields one record per transaction; filtering by an
    inclusive ``heights`` range yields one record per block (``tx`` is None).
    """
    if (author is None) == (heights is None):
        raise TypeError("pass exactly one of author= or heights=")
    if heights is not None:
        lo, hi = heights
        return [Record(b.height, b, None) for b in chain.blocks[max(lo, 0):max(hi + 1, 0)]]
    return [
        Record(b.height, b, tx)
        for b in chain.blocks
        for tx in b.transactions
        if tx.author == author
    ]


def dump_chain(chain: ChainState) -> bytes:
    """Length-prefixed (4-byte LE) sequence of encoded blocks, genesis first."""
    parts = []
    for block in chain.blocks:
        data = block.encode()
        parts.append(struct.pack("<I", len(data)))
        parts.append(data)
    return b"".join(parts)


def load_chain(data: bytes) -> ChainState:
    """Rebuild a chain from a dump, re-validating every block."""
    reader = Reader(data)
    blocks = []
    while reader.remaining():
        blocks.append(Block.decode(reader.take(reader.u32())))
    if not blocks or blocks[0] != GENESIS:
        raise InvalidBlock(BlockVerdict.BAD_LINK, "dump does not start at genesis")
    chain = ChainState()
    for block in blocks[1:]:
        chain = append_block(chain, block)
    return chain


def save_chain(chain: ChainState, path: str | Path) -> None:
    Path(path).write_bytes(dump_chain(chain))


def read_chain(path: str | Path) -> ChainState:
    return load_chain(Path(path).read_bytes())


def full_scan(dump: bytes) -> list[str]:
    """Audit a chain dump from raw bytes and return every problem found.

    This deliberately re-parses the byte layout and recomputes every digest
    with hashlib instead of going through the incremental append path, so it
    can serve as an independent check of that path.
    """
    problems: list[str] = []
    pos = 0
    prev_hash = None
    prev_height = -1
    seen: set[tuple[bytes, int]] = set()
    genesis = GENESIS.encode()
    while pos < len(dump):
        if pos + 4 > len(dump):
            return problems + [f"truncated length prefix at {pos}"]
        (length,) = struct.unpack_from("<I", dump, pos)
        pos += 4
        raw = dump[pos:pos + length]
        if len(raw) != length or length < HEADER_SIZE + SIGNATURE_SIZE:
            return problems + [f"truncated block at {pos}"]
        pos += length
        header = raw[:HEADER_SIZE]
        version, height, prev, root, proposer, _, count = struct.unpack(HEADER_FORMAT, header)
        header_hash = hashlib.sha256(header).digest()
        where = f"block {prev_height + 1}"
        if prev_hash is None:
            if raw != genesis:
                problems.append("first block is not the canonical genesis")
        else:
            if version != BLOCK_VERSION:
                problems.append(f"{where}: bad version")
            if height != prev_height + 1:
                problems.append(f"{where}: height {height} not consecutive")
            if prev != prev_hash:
                problems.append(f"{where}: prev_hash does not link")
            if not verify(proposer, header, raw[HEADER_SIZE:HEADER_SIZE + SIGNATURE_SIZE]):
                problems.append(f"{where}: proposer signature invalid")
            off = HEADER_SIZE + SIGNATURE_SIZE
            digests = []
            for i in range(count):
                if off + TX_HEADER_SIZE > len(raw):
                    problems.append(f"{where}: transaction {i} truncated")
                    break
                (plen,) = struct.unpack_from("<I", raw, off + TX_HEADER_SIZE - 4)
                body_end = off + TX_HEADER_SIZE + plen
                tx_end = body_end + SIGNATURE_SIZE
                if tx_end > len(raw):
                    problems.append(f"{where}: transaction {i} truncated")
                    break
                body = raw[off:body_end]
                author = body[1:1 + KEY_SIZE]
                (nonce,) = struct.unpack_from("<Q", body, 1 + KEY_SIZE)
                if body[0] != TX_VERSION:
                    problems.append(f"{where}: transaction {i} bad version")
                if not verify(author, body, raw[body_end:tx_end]):
                    problems.append(f"{where}: transaction {i} signature invalid")
                if (author, nonce) in seen:
                    problems.append(f"{where}: transaction {i} duplicate nonce")
                seen.add((author, nonce))
                digests.append(hashlib.sha256(raw[off:tx_end]).digest())
                off = tx_end
            else:
                if off != len(raw):
                    problems.append(f"{where}: trailing bytes after transactions")
            if count == 0:
                problems.append(f"{where}: empty block")
            if hashlib.sha256(b"".join(digests)).digest() != root:
                problems.append(f"{where}: tx_root mismatch")
        prev_hash = header_hash
        prev_height = height
    if prev_hash is None:
        problems.append("empty dump")
    return problems
