import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotfog._codec import DecodeError
from iotfog.identity import generate_keypair, sha256, sign
from iotfog.ledger import (
    GENESIS,
    HEADER_SIZE,
    Block,
    BlockVerdict,
    ChainState,
    InvalidBlock,
    Transaction,
    TxVerdict,
    append_block,
    build_block,
    check_block,
    compute_tx_root,
    dump_chain,
    full_scan,
    load_chain,
    new_transaction,
    query_ledger,
    read_chain,
    save_chain,
    validate_block,
    validate_transaction,
)

# Frozen from tests/oracles.py (libsodium signatures, struct layouts, hashlib).
TX_HASH = "83b7b101ed360d32f7ff9f1b3b569b443b80dfd22a03d8862ff88af78a37262b"
GENESIS_HASH = "d36d61d1a99d55875f5956f6d4998b142c1366a6bff0a164b64f1f7c1e6407dd"
BLOCK1_HASH = "3f61ce7aae503f4e008267224845d2dc3cbf18e6768d526fca7fc274a2d40686"
BLOCK1_SIG = (
    "f92f36c9fb4694a2f8e43ce785ce35accdfd82f44439630cca07efe6932c1f3a"
    "1ac1f8335331368e92ca0b72cdcb6f61f02fb7caa57fbb0250f40e5ce9398b0d"
)

DEV = generate_keypair(1)
MINER = generate_keypair(2)


def grow(chain, n_blocks, per_block=2, start_nonce=0):
    nonce = start_nonce
    for h in range(n_blocks):
        txs = [new_transaction(DEV, nonce + i, 100 * h + i, b"r%d" % (nonce + i)) for i in range(per_block)]
        nonce += per_block
        chain = append_block(chain, build_block(chain, txs, MINER, 10 * (h + 1)))
    return chain


class TestFrozenValues:
    def test_transaction_hash(self):
        assert new_transaction(DEV, 7, 1000, b"hello").hash.hex() == TX_HASH

    def test_genesis_hash(self):
        assert GENESIS.hash.hex() == GENESIS_HASH
        assert len(GENESIS.header.encode()) == HEADER_SIZE == 117

    def test_first_block(self):
        tx = new_transaction(DEV, 7, 1000, b"hello")
        block = build_block(ChainState(), [tx], MINER, 5)
        assert block.hash.hex() == BLOCK1_HASH
        assert block.proposer_signature.hex() == BLOCK1_SIG

    def test_empty_root(self):
        assert compute_tx_root([]) == sha256(b"")


class TestTransactions:
    def test_valid(self):
        assert validate_transaction(new_transaction(DEV, 0, 0, b""), ChainState()) is TxVerdict.VALID

    def test_bad_signature(self):
        tx = dataclasses.replace(new_transaction(DEV, 0, 0, b"a"), payload=b"b")
        assert validate_transaction(tx, ChainState()) is TxVerdict.BAD_SIGNATURE

    def test_duplicate_nonce_after_commit(self):
        chain = grow(ChainState(), 1)
        assert validate_transaction(new_transaction(DEV, 0, 99, b"again"), chain) is TxVerdict.DUPLICATE_NONCE

    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1), st.binary(max_size=200))
    def test_wire_roundtrip(self, nonce, ts, payload):
        tx = new_transaction(DEV, nonce, ts, payload)
        assert Transaction.decode(tx.encode()) == tx

    def test_truncated_wire(self):
        wire = new_transaction(DEV, 0, 0, b"abc").encode()
        with pytest.raises(DecodeError):
            Transaction.decode(wire[:-1])
        with pytest.raises(DecodeError):
            Transaction.decode(wire + b"\x00")


class TestBlocks:
    def test_empty_block_refused(self):
        with pytest.raises(ValueError):
            build_block(ChainState(), [], MINER, 0)

    def test_duplicate_nonce_within_block_refused(self):
        a, b = new_transaction(DEV, 0, 0, b"a"), new_transaction(DEV, 0, 1, b"b")
        with pytest.raises(ValueError):
            build_block(ChainState(), [a, b], MINER, 0)

    def test_bad_link(self):
        chain = grow(ChainState(), 1)
        stale = build_block(ChainState(), [new_transaction(DEV, 50, 0, b"x")], MINER, 0)
        assert validate_block(stale, chain) is BlockVerdict.BAD_LINK

    def test_bad_root(self):
        block = build_block(ChainState(), [new_transaction(DEV, 0, 0, b"x")], MINER, 0)
        swapped = dataclasses.replace(block, transactions=(new_transaction(DEV, 1, 0, b"y"),))
        assert validate_block(swapped, ChainState()) is BlockVerdict.BAD_ROOT

    def test_bad_proposer_signature(self):
        block = build_block(ChainState(), [new_transaction(DEV, 0, 0, b"x")], MINER, 0)
        forged = dataclasses.replace(block, proposer_signature=bytes(64))
        assert validate_block(forged, ChainState()) is BlockVerdict.BAD_PROPOSER_SIG

    def test_bad_tx(self):
        chain = grow(ChainState(), 1)
        replay = build_block(chain, [new_transaction(DEV, 5, 0, b"x")], MINER, 0)
        txs = (new_transaction(DEV, 0, 0, b"replayed"),)
        header = dataclasses.replace(replay.header, tx_root=compute_tx_root(txs))
        block = Block(header, txs, sign(MINER, header.encode()))
        verdict, reason = check_block(block, chain)
        assert verdict is BlockVerdict.BAD_TX
        assert "duplicate" in reason

    def test_append_rejects_without_mutation(self):
        chain = grow(ChainState(), 2)
        before = dump_chain(chain)
        stale = build_block(ChainState(), [new_transaction(DEV, 99, 0, b"x")], MINER, 0)
        with pytest.raises(InvalidBlock) as err:
            append_block(chain, stale)
        assert err.value.verdict is BlockVerdict.BAD_LINK
        assert dump_chain(chain) == before

    def test_block_wire_roundtrip(self):
        block = grow(ChainState(), 1, per_block=3).tip
        assert Block.decode(block.encode()) == block


class TestChainProperties:
    @settings(max_examples=25)
    @given(st.lists(st.integers(1, 4), min_size=1, max_size=5))
    def test_links_and_heights(self, sizes):
        chain, nonce = ChainState(), 0
        for h, size in enumerate(sizes, 1):
            txs = [new_transaction(DEV, nonce + i, i, b"") for i in range(size)]
            nonce += size
            chain = append_block(chain, build_block(chain, txs, MINER, h))
        for prev, block in zip(chain.blocks, chain.blocks[1:]):
            assert block.height == prev.height + 1
            assert block.header.prev_hash == prev.hash
        assert chain.tx_count == sum(sizes)
        assert full_scan(dump_chain(chain)) == []

    @settings(max_examples=25)
    @given(st.integers(1, 4), st.data())
    def test_any_byte_flip_is_detected(self, n_blocks, data):
        dump = bytearray(dump_chain(grow(ChainState(), n_blocks)))
        pos = data.draw(st.integers(0, len(dump) - 1))
        dump[pos] ^= 1 << data.draw(st.integers(0, 7))
        assert full_scan(bytes(dump)) != []


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        chain = grow(ChainState(), 3)
        path = tmp_path / "chain.bin"
        save_chain(chain, path)
        again = read_chain(path)
        assert dump_chain(again) == dump_chain(chain)
        assert again.index == chain.index

    def test_load_requires_genesis(self):
        dump = dump_chain(grow(ChainState(), 1))
        with pytest.raises(InvalidBlock):
            load_chain(dump[4 + len(GENESIS.encode()):])

    def test_full_scan_on_empty_dump(self):
        assert full_scan(b"") == ["empty dump"]


class TestQuery:
    def test_by_author(self):
        chain = grow(ChainState(), 2)
        other = generate_keypair(5)
        chain = append_block(chain, build_block(chain, [new_transaction(other, 0, 0, b"o")], MINER, 99))
        records = query_ledger(chain, author=DEV.public)
        assert [r.height for r in records] == [1, 1, 2, 2]
        assert all(r.tx.author == DEV.public for r in records)

    def test_by_heights(self):
        chain = grow(ChainState(), 3)
        assert [r.height for r in query_ledger(chain, heights=(1, 2))] == [1, 2]
        assert query_ledger(chain, heights=(5, 9)) == []

    def test_exactly_one_filter(self):
        with pytest.raises(TypeError):
            query_ledger(ChainState())
