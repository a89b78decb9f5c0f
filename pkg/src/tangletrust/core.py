"""Hashing, canonical encoding, proof-of-work, signatures and token amounts.

Everything that gets hashed or signed goes through :func:`encode`, a small
tagged, length-prefixed format:

====  =====================================================
tag   body
====  =====================================================
``n`` (none)
``t`` / ``f``  boolean true / false
``i`` u8 length + signed big-endian two's complement integer
``b`` u32 length + raw bytes
``s`` u32 length + UTF-8 text
``l`` u32 item count + concatenated encoded items
====  =====================================================

Tuples and lists encode identically and decode to tuples, so a value survives
``decode(encode(x))`` up to that normalisation.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

DIGEST_LEN = 64
DIFFICULTY_CAP = 24
# how often a nonce search polls its cancellation callback
POLL_EVERY = 256

NodeId = bytes
HashDigest = bytes

ZERO_DIGEST = bytes(DIGEST_LEN)


class DifficultyTooHigh(ValueError):
    pass


class InvalidKey(ValueError):
    pass


class PowInterrupted(Exception):
    """Raised when a nonce search is cancelled or exhausts its attempt budget."""

    def __init__(self, attempts: int):
        super().__init__(f"nonce search stopped after {attempts} attempts")
        self.attempts = attempts


class Check(NamedTuple):
    """Outcome of a validation: truthy when ``ok``; ``reason`` names the failure."""

    ok: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


PASS = Check(True)


def fail(reason: str) -> Check:
    return Check(False, reason)


# -- canonical encoding -------------------------------------------------------

def encode(obj: Any) -> bytes:
    out = bytearray()
    _encode_into(obj, out)
    return bytes(out)


_PACK_U8 = struct.Struct(">B").pack
_PACK_U32 = struct.Struct(">I").pack


def _encode_into(obj: Any, out: bytearray) -> None:
    t = type(obj)
    if t is bytes:
        out += b"b"
        out += _PACK_U32(len(obj))
        out += obj
    elif t is tuple or t is list:
        out += b"l"
        out += _PACK_U32(len(obj))
        for item in obj:
            _encode_into(item, out)
    elif obj is None:
        out += b"n"
    elif obj is True:
        out += b"t"
    elif obj is False:
        out += b"f"
    elif isinstance(obj, int):
        n = int(obj)
        raw = n.to_bytes((n.bit_length() + 8) // 8, "big", signed=True)
        out += b"i"
        out += _PACK_U8(len(raw))
        out += raw
    elif isinstance(obj, str):
        raw = obj.encode("utf-8")
        out += b"s"
        out += _PACK_U32(len(raw))
        out += raw
    elif isinstance(obj, (bytes, bytearray)):
        out += b"b"
        out += _PACK_U32(len(obj))
        out += bytes(obj)
    elif isinstance(obj, (list, tuple)):
        out += b"l"
        out += _PACK_U32(len(obj))
        for item in obj:
            _encode_into(item, out)
    else:
        raise TypeError(f"cannot canonically encode {type(obj).__name__}")


def decode(data: bytes) -> Any:
    obj, pos = _decode_at(data, 0)
    if pos != len(data):
        raise ValueError("trailing bytes after canonical value")
    return obj


def _decode_at(data: bytes, pos: int):
    tag = data[pos:pos + 1]
    pos += 1
    if tag == b"n":
        return None, pos
    if tag == b"t":
        return True, pos
    if tag == b"f":
        return False, pos
    if tag == b"i":
        (length,) = struct.unpack_from(">B", data, pos)
        pos += 1
        return int.from_bytes(data[pos:pos + length], "big", signed=True), pos + length
    if tag in (b"b", b"s"):
        (length,) = struct.unpack_from(">I", data, pos)
        pos += 4
        raw = data[pos:pos + length]
        if len(raw) != length:
            raise ValueError("truncated canonical value")
        return (bytes(raw) if tag == b"b" else raw.decode("utf-8")), pos + length
    if tag == b"l":
        (count,) = struct.unpack_from(">I", data, pos)
        pos += 4
        items = []
        for _ in range(count):
            item, pos = _decode_at(data, pos)
            items.append(item)
        return tuple(items), pos
    raise ValueError(f"unknown canonical tag {tag!r}")


# -- hashing and proof-of-work ------------------------------------------------

def digest(data: bytes) -> HashDigest:
    return hashlib.sha3_512(data).digest()


def leading_zero_bits(value: bytes) -> int:
    n = 0
    for byte in value:
        if byte:
            return n + 8 - byte.bit_length()
        n += 8
    return n


def meets_target(value: bytes, difficulty_bits: int) -> bool:
    if difficulty_bits <= 0:
        return True
    head = (difficulty_bits + 7) // 8
    return int.from_bytes(value[:head], "big") >> (head * 8 - difficulty_bits) == 0


_U64 = struct.Struct(">Q")


def _nonce_bytes(nonce: int) -> bytes:
    return nonce.to_bytes(8, "big")


@dataclass(frozen=True)
class PowSolution:
    nonce: int
    difficulty_bits: int
    digest: HashDigest

    def fields(self):
        return (self.nonce, self.difficulty_bits, self.digest)

    @classmethod
    def from_fields(cls, fields) -> "PowSolution":
        nonce, bits, dig = fields
        return cls(nonce, bits, dig)


def pow_hash(payload: bytes, nonce: int) -> HashDigest:
    return hashlib.sha3_512(payload + _nonce_bytes(nonce)).digest()


def pow_solve(
    payload: bytes,
    difficulty_bits: int,
    start_nonce: int = 0,
    *,
    cap: int = DIFFICULTY_CAP,
    max_attempts: Optional[int] = None,
    should_stop: Optional[Callable[[], bool]] = None,
) -> PowSolution:
    """Return the lowest nonce >= ``start_nonce`` whose digest meets the target.

    ``should_stop`` is polled every ``POLL_EVERY`` attempts; when it returns
    true (or ``max_attempts`` is spent) :class:`PowInterrupted` is raised.
    """
    if not payload:
        raise ValueError("payload must be non-empty")
    if difficulty_bits < 0 or difficulty_bits > cap:
        raise DifficultyTooHigh(f"difficulty {difficulty_bits} outside [0, {cap}]")
    copy = hashlib.sha3_512(payload).copy
    pack = _U64.pack
    head = max(1, (difficulty_bits + 7) // 8)
    shift = head * 8 - difficulty_bits
    nonce = start_nonce
    attempts = 0
    while True:
        h = copy()
        h.update(pack(nonce))
        d = h.digest()
        attempts += 1
        if int.from_bytes(d[:head], "big") >> shift == 0:
            return PowSolution(nonce, difficulty_bits, d)
        nonce += 1
        if max_attempts is not None and attempts >= max_attempts:
            raise PowInterrupted(attempts)
        if should_stop is not None and attempts % POLL_EVERY == 0 and should_stop():
            raise PowInterrupted(attempts)


def pow_verify(payload: bytes, solution: PowSolution) -> bool:
    try:
        if not isinstance(solution.nonce, int) or solution.nonce < 0 or solution.nonce >= 1 << 64:
            return False
        if not isinstance(solution.difficulty_bits, int) or solution.difficulty_bits < 0:
            return False
        if len(solution.digest) != DIGEST_LEN:
            return False
        return pow_hash(payload, solution.nonce) == solution.digest and meets_target(
            solution.digest, solution.difficulty_bits
        )
    except (TypeError, AttributeError, OverflowError):
        return False


# -- identities and signatures ------------------------------------------------

@dataclass(frozen=True)
class Signature:
    public_key: bytes
    value: bytes

    def fields(self):
        return (self.public_key, self.value)

    @classmethod
    def from_fields(cls, fields) -> "Signature":
        pk, value = fields
        return cls(pk, value)


def node_id_for(public_key: bytes) -> NodeId:
    return digest(b"node-id" + public_key)


class KeyPair:
    """Ed25519 key pair; deterministic from a 32-byte seed."""

    def __init__(self, seed: bytes):
        if not isinstance(seed, (bytes, bytearray)) or len(seed) != 32:
            raise InvalidKey("key seed must be 32 bytes")
        self._sk = Ed25519PrivateKey.from_private_bytes(bytes(seed))
        self.public_key = self._sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        self.node_id: NodeId = node_id_for(self.public_key)

    @classmethod
    def derive(cls, label: str, index: int = 0) -> "KeyPair":
        return cls(hashlib.sha3_256(encode(("keypair", label, index))).digest())

    def sign(self, message: bytes) -> Signature:
        return Signature(self.public_key, self._sk.sign(message))

    def __repr__(self) -> str:
        return f"KeyPair({self.node_id[:4].hex()}…)"


def verify(node_id: NodeId, message: bytes, signature: Signature) -> bool:
    try:
        if node_id_for(signature.public_key) != node_id:
            return False
        Ed25519PublicKey.from_public_bytes(signature.public_key).verify(signature.value, message)
        return True
    except (InvalidSignature, ValueError, TypeError, AttributeError):
        return False


# -- token amounts ------------------------------------------------------------

MONEY_MAX = (1 << 64) - 1


class Money(int):
    """Non-negative token amount; arithmetic raises instead of going out of range."""

    def __new__(cls, amount: int = 0):
        amount = int(amount)
        if amount < 0 or amount > MONEY_MAX:
            raise OverflowError(f"money amount {amount} out of range")
        return super().__new__(cls, amount)

    def __add__(self, other):
        return Money(int(self) + int(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Money(int(self) - int(other))

    def __rsub__(self, other):
        return Money(int(other) - int(self))

    def __mul__(self, other):
        return Money(int(self) * int(other))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Money({int(self)})"
