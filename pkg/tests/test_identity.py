import hashlib
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import needs_sodium
from iotfog.identity import (
    KEY_SIZE,
    SIGNATURE_SIZE,
    TX_HEADER_SIZE,
    NodeKeyPair,
    encode_transaction_fields,
    generate_keypair,
    sha256,
    sign,
    verify,
)
from oracles import (
    seed_secret,
    sodium_keypair,
    sodium_sha256,
    sodium_sign,
    sodium_verify,
    tx_signing_bytes,
)

# Frozen from the libsodium oracle (see tests/oracles.py).
PK1 = bytes.fromhex("8b4e53e7f6df615b7f28deb9c32cce0a74357b1446e05d480ec0006d312cedf8")
TX_SIG = bytes.fromhex(
    "4041fb9f3e7e7b1b04d2d76bc45c46a315687c8588dce844c112cb584e1c9a6c"
    "f5ccbf4770166d4f07ecc9afe0427994a72739443a991deb5f43b64eed741008"
)

# FIPS 180-2 / NIST example vectors.
SHA256_VECTORS = [
    (b"", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    (b"abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
    (
        b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1",
    ),
    (b"a" * 1_000_000, "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0"),
]

# RFC 8032 Ed25519 test vectors 1 and 2.
RFC8032 = [
    (
        "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
        "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
        "",
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155"
        "5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
    ),
    (
        "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
        "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c",
        "72",
        "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da"
        "085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
    ),
]


class TestSha256:
    @pytest.mark.parametrize("data,expected", SHA256_VECTORS)
    def test_standard_vectors(self, data, expected):
        assert sha256(data).hex() == expected

    @needs_sodium
    @given(st.binary(max_size=512))
    def test_matches_libsodium(self, data):
        assert sha256(data) == sodium_sha256(data)


class TestKeys:
    def test_seed_zero_and_one_are_distinct(self):
        assert generate_keypair(0).public != generate_keypair(1).public

    def test_frozen_public_key(self):
        """Seed 1 maps to the key libsodium derives from SHA-256(seed)."""
        assert generate_keypair(1).public == PK1

    @pytest.mark.parametrize("seed", [-1, 2**64])
    def test_seed_out_of_range(self, seed):
        with pytest.raises(ValueError):
            generate_keypair(seed)

    def test_mismatched_pair_rejected(self):
        a, b = generate_keypair(1), generate_keypair(2)
        with pytest.raises(ValueError):
            NodeKeyPair(a.secret, b.public)

    @needs_sodium
    @given(st.integers(0, 2**64 - 1))
    def test_derivation_matches_libsodium(self, seed):
        assert generate_keypair(seed).public == sodium_keypair(seed_secret(seed))[0]


class TestSignatures:
    @pytest.mark.parametrize("secret,public,msg,sig", RFC8032)
    def test_rfc8032_vectors(self, secret, public, msg, sig):
        key = NodeKeyPair(bytes.fromhex(secret), bytes.fromhex(public))
        assert sign(key, bytes.fromhex(msg)).hex() == sig
        assert verify(key.public, bytes.fromhex(msg), bytes.fromhex(sig))

    def test_frozen_transaction_signature(self):
        msg = tx_signing_bytes(PK1, 7, 1000, b"hello")
        assert sign(generate_keypair(1), msg) == TX_SIG

    @given(st.binary(max_size=256), st.integers(0, 2**16))
    def test_roundtrip(self, msg, seed):
        key = generate_keypair(seed)
        sig = sign(key, msg)
        assert len(sig) == SIGNATURE_SIZE
        assert verify(key.public, msg, sig)

    @given(st.binary(min_size=1, max_size=128), st.data())
    def test_single_bit_tamper_fails(self, msg, data):
        key = generate_keypair(3)
        sig = sign(key, msg)
        blob = bytearray(msg + sig)
        bit = data.draw(st.integers(0, len(blob) * 8 - 1))
        blob[bit // 8] ^= 1 << (bit % 8)
        assert not verify(key.public, bytes(blob[: len(msg)]), bytes(blob[len(msg):]))

    def test_wrong_key_fails(self):
        sig = sign(generate_keypair(1), b"m")
        assert not verify(generate_keypair(2).public, b"m", sig)

    @pytest.mark.parametrize("public,sig", [(b"\x00" * 31, b"\x00" * 64), (b"\x00" * 32, b"\x00" * 63)])
    def test_malformed_inputs_are_false(self, public, sig):
        assert verify(public, b"m", sig) is False

    @needs_sodium
    @given(st.binary(max_size=128), st.integers(0, 2**16))
    def test_signatures_match_libsodium(self, msg, seed):
        pk, sk = sodium_keypair(seed_secret(seed))
        sig = sign(generate_keypair(seed), msg)
        assert sig == sodium_sign(sk, msg)
        assert sodium_verify(pk, msg, sig)


class TestTransactionEncoding:
    def test_layout(self):
        enc = encode_transaction_fields(PK1, 7, 1000, b"hello")
        assert len(enc) == TX_HEADER_SIZE + 5
        assert enc[0] == 0x01
        assert enc[1:33] == PK1
        assert struct.unpack_from("<QQI", enc, 33) == (7, 1000, 5)

    @given(st.binary(min_size=KEY_SIZE, max_size=KEY_SIZE), st.integers(0, 2**64 - 1),
           st.integers(0, 2**64 - 1), st.binary(max_size=300))
    def test_matches_reference_layout(self, author, nonce, ts, payload):
        assert encode_transaction_fields(author, nonce, ts, payload) == tx_signing_bytes(author, nonce, ts, payload)

    def test_short_author_rejected(self):
        with pytest.raises(ValueError):
            encode_transaction_fields(b"x" * 31, 0, 0, b"")

    def test_hash_is_hashlib(self):
        assert sha256(b"xyz") == hashlib.sha256(b"xyz").digest()
