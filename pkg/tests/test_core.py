import hashlib
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sha3_leading_zeros
from tangletrust.core import (
    DIGEST_LEN,
    DifficultyTooHigh,
    InvalidKey,
    KeyPair,
    Money,
    PowInterrupted,
    PowSolution,
    decode,
    digest,
    encode,
    leading_zero_bits,
    meets_target,
    pow_hash,
    pow_solve,
    pow_verify,
    verify,
)

PAYLOAD = b"reading:42"

values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2 ** 70), 2 ** 70) | st.binary(max_size=40) | st.text(max_size=20),
    lambda inner: st.lists(inner, max_size=5).map(tuple),
    max_leaves=20,
)


@given(values)
def test_encode_round_trip(v):
    assert decode(encode(v)) == v


@given(values, values)
def test_encode_injective(a, b):
    if a != b:
        assert encode(a) != encode(b)


def test_digest_is_sha3_512():
    assert digest(b"abc") == hashlib.sha3_512(b"abc").digest()
    assert len(digest(b"")) == DIGEST_LEN


@given(st.binary(min_size=1, max_size=64))
def test_leading_zero_bits_matches_bitstring(data):
    d = hashlib.sha3_512(data).digest()
    assert leading_zero_bits(d) == sha3_leading_zeros(data)
    assert meets_target(d, leading_zero_bits(d))
    assert not meets_target(d, leading_zero_bits(d) + 1)


def test_zero_difficulty_accepts_first_nonce():
    sol = pow_solve(b"anything", 0)
    assert sol.nonce == 0


def test_pow15_has_fifteen_leading_zeros():
    sol = pow_solve(PAYLOAD, 15)
    assert sha3_leading_zeros(PAYLOAD + sol.nonce.to_bytes(8, "big")) >= 15
    assert pow_verify(PAYLOAD, sol)


def test_solve_returns_lowest_qualifying_nonce():
    sol = pow_solve(PAYLOAD, 6)
    for n in range(sol.nonce):
        assert leading_zero_bits(pow_hash(PAYLOAD, n)) < 6


def test_verify_round_trip_and_payload_binding():
    sol = pow_solve(PAYLOAD, 10)
    assert pow_verify(PAYLOAD, sol)
    assert not pow_verify(b"reading:43", sol)


def test_verify_rejects_every_tampered_digest_byte():
    sol = pow_solve(PAYLOAD, 8)
    for i in range(DIGEST_LEN):
        bad = bytearray(sol.digest)
        bad[i] ^= 0x01
        assert not pow_verify(PAYLOAD, PowSolution(sol.nonce, sol.difficulty_bits, bytes(bad)))


def test_verify_rejects_inflated_difficulty_claim():
    sol = pow_solve(PAYLOAD, 4)
    claimed = PowSolution(sol.nonce, leading_zero_bits(sol.digest) + 1, sol.digest)
    assert not pow_verify(PAYLOAD, claimed)


def test_verify_rejects_garbage():
    assert not pow_verify(PAYLOAD, PowSolution(-1, 0, bytes(64)))
    assert not pow_verify(PAYLOAD, PowSolution(0, 0, b"short"))
    assert not pow_verify(PAYLOAD, PowSolution("x", 0, bytes(64)))


def test_verify_is_pure():
    sol = pow_solve(PAYLOAD, 5)
    assert len({pow_verify(PAYLOAD, sol) for _ in range(5)}) == 1


def test_difficulty_cap_and_empty_payload():
    with pytest.raises(DifficultyTooHigh):
        pow_solve(PAYLOAD, 25)
    with pytest.raises(DifficultyTooHigh):
        pow_solve(PAYLOAD, -1)
    with pytest.raises(ValueError):
        pow_solve(b"", 1)


def test_interruption_is_observed_within_poll_interval():
    calls = []

    def stop():
        calls.append(1)
        return True

    with pytest.raises(PowInterrupted) as info:
        pow_solve(PAYLOAD, 24, should_stop=stop)
    assert info.value.attempts <= 256
    with pytest.raises(PowInterrupted):
        pow_solve(PAYLOAD, 24, max_attempts=10)


@pytest.mark.slow
def test_success_frequency_matches_two_to_minus_z():
    n, z = 100_000, 4
    base = hashlib.sha3_512(b"frequency")
    hits = 0
    for nonce in range(n):
        h = base.copy()
        h.update(nonce.to_bytes(8, "big"))
        hits += meets_target(h.digest(), z)
    p = 2 ** -z
    se = math.sqrt(p * (1 - p) / n)
    assert abs(hits / n - p) <= 3 * se


def test_sign_verify_round_trip_and_identity_binding():
    a, b = KeyPair.derive("a"), KeyPair.derive("b")
    sig = a.sign(b"hello")
    assert verify(a.node_id, b"hello", sig)
    assert not verify(b.node_id, b"hello", sig)


def test_every_single_bit_flip_breaks_signature():
    k = KeyPair.derive("flip")
    msg = b"pay 5 to bob"
    sig = k.sign(msg)
    for i in range(len(msg) * 8):
        mutated = bytearray(msg)
        mutated[i // 8] ^= 1 << (i % 8)
        assert not verify(k.node_id, bytes(mutated), sig)


def test_keys_are_deterministic_and_seed_checked():
    assert KeyPair.derive("x").node_id == KeyPair.derive("x").node_id
    assert KeyPair.derive("x").node_id != KeyPair.derive("x", 1).node_id
    with pytest.raises(InvalidKey):
        KeyPair(b"short")


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32), st.integers(0, 2 ** 32))
def test_money_never_goes_negative(a, b):
    if a >= b:
        assert Money(a) - b == a - b
    else:
        with pytest.raises(OverflowError):
            Money(a) - b
