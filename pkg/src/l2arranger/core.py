"""Domain types shared across the arranger stack, plus canonical serialization.

Every type here is an immutable value. Byte encodings are length-prefixed
field concatenations with fixed-width big-endian integers, so they are
injective and identical across processes.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Iterable, Sequence


class ArrangerError(Exception):
    """Base class for every error raised by this package."""


class DuplicateTransaction(ArrangerError):
    pass


class DecodeError(ArrangerError):
    pass


def u32(n: int) -> bytes:
    return struct.pack(">I", n)


def u64(n: int) -> bytes:
    return struct.pack(">Q", n)


def lp(data: bytes) -> bytes:
    """Length-prefix ``data`` with a u32."""
    return u32(len(data)) + data


class Reader:
    """Cursor over a byte string used by the ``deserialize`` methods."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def lp(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError("trailing bytes")


@dataclass(frozen=True)
class Transaction:
    payload: bytes
    author: bytes
    signature: bytes

    def serialize(self) -> bytes:
        return lp(self.payload) + lp(self.author) + lp(self.signature)

    @classmethod
    def read(cls, r: Reader) -> Transaction:
        return cls(r.lp(), r.lp(), r.lp())

    @classmethod
    def deserialize(cls, data: bytes) -> Transaction:
        r = Reader(data)
        tx = cls.read(r)
        r.done()
        return tx

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.serialize()).digest()

    def short(self) -> str:
        return self.digest.hex()[:12]


def sign_transaction(keypair, payload: bytes) -> Transaction:
    from .crypto import CLIENT_SCHEME

    return Transaction(payload, keypair.pk, CLIENT_SCHEME.sign(keypair.sk, payload))


def validate_transaction(tx: Transaction) -> bool:
    """A transaction is valid iff its payload is non-empty and the author signed it."""
    from .crypto import CLIENT_SCHEME

    if not tx.payload:
        return False
    return CLIENT_SCHEME.verify(tx.author, tx.payload, tx.signature)


def canonical_order(txs: Iterable[Transaction]) -> list[Transaction]:
    """Order transactions by the SHA-256 digest of their serialization."""
    txs = list(txs)
    ordered = sorted(txs, key=lambda t: t.digest)
    for a, b in zip(ordered, ordered[1:]):
        if a.digest == b.digest:
            raise DuplicateTransaction(a.short())
    return ordered


class ElementKind(IntEnum):
    TX = 0
    META_SIGNATURE = 1


@dataclass(frozen=True)
class EpochSignature:
    """A server's signature over the batch tag it computed for an epoch."""

    epoch: int
    root: bytes
    signer: int
    signature: bytes

    def serialize(self) -> bytes:
        return u64(self.epoch) + self.root + u32(self.signer) + lp(self.signature)

    @classmethod
    def read(cls, r: Reader) -> EpochSignature:
        return cls(r.u64(), r.take(32), r.u32(), r.lp())


@dataclass(frozen=True)
class SetElement:
    kind: ElementKind
    body: Transaction | EpochSignature

    @classmethod
    def tx(cls, tx: Transaction) -> SetElement:
        return cls(ElementKind.TX, tx)

    @classmethod
    def meta(cls, sig: EpochSignature) -> SetElement:
        return cls(ElementKind.META_SIGNATURE, sig)

    def serialize(self) -> bytes:
        return bytes([self.kind]) + self.body.serialize()

    @classmethod
    def deserialize(cls, data: bytes) -> SetElement:
        r = Reader(data)
        kind = ElementKind(r.u8())
        body = Transaction.read(r) if kind == ElementKind.TX else EpochSignature.read(r)
        r.done()
        return cls(kind, body)

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(self.serialize()).digest()


@dataclass(frozen=True)
class Batch:
    id: int
    txs: tuple[Transaction, ...] = ()

    def __post_init__(self):
        if not isinstance(self.txs, tuple):
            object.__setattr__(self, "txs", tuple(self.txs))

    def __len__(self) -> int:
        return len(self.txs)

    def serialize(self) -> bytes:
        return u64(self.id) + u32(len(self.txs)) + b"".join(lp(t.serialize()) for t in self.txs)

    @classmethod
    def deserialize(cls, data: bytes) -> Batch:
        r = Reader(data)
        bid = r.u64()
        txs = tuple(Transaction.deserialize(r.lp()) for _ in range(r.u32()))
        r.done()
        return cls(bid, txs)


def encode_txs(txs: Sequence[Transaction]) -> bytes:
    """Raw encoding of a transaction list, the unit that gets compressed."""
    return u32(len(txs)) + b"".join(lp(t.serialize()) for t in txs)


def decode_txs(data: bytes) -> tuple[Transaction, ...]:
    r = Reader(data)
    txs = tuple(Transaction.deserialize(r.lp()) for _ in range(r.u32()))
    r.done()
    return txs


def to_batch(epoch_number: int, epoch_elements: Iterable[SetElement]) -> Batch:
    """Pack the transactions of an agreed epoch into a batch; metadata is dropped."""
    txs = [e.body for e in epoch_elements if e.kind == ElementKind.TX]
    return Batch(epoch_number, tuple(canonical_order(txs)))


@dataclass(frozen=True)
class BatchTag:
    id: int
    root: bytes

    def serialize(self) -> bytes:
        return u64(self.id) + self.root


def tag_message(batch_id: int, root: bytes) -> bytes:
    """The hash-identifier pair that arranger servers sign."""
    return b"L2ARR-TAG" + u64(batch_id) + root


def signers_to_bitmap(signers: Iterable[int]) -> bytes:
    signers = list(signers)
    if not signers:
        return b""
    out = bytearray(max(signers) // 8 + 1)
    for s in signers:
        out[s // 8] |= 1 << (s % 8)
    return bytes(out)


def bitmap_to_signers(bitmap: bytes) -> tuple[int, ...]:
    return tuple(i * 8 + b for i, byte in enumerate(bitmap) for b in range(8) if byte >> b & 1)


@dataclass(frozen=True)
class SignedBatchTag:
    tag: BatchTag
    sig: bytes
    signers: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "signers", tuple(sorted(set(self.signers))))

    @property
    def id(self) -> int:
        return self.tag.id

    @property
    def root(self) -> bytes:
        return self.tag.root

    def serialize(self) -> bytes:
        return self.tag.serialize() + lp(signers_to_bitmap(self.signers)) + lp(self.sig)

    @classmethod
    def deserialize(cls, data: bytes) -> SignedBatchTag:
        r = Reader(data)
        tag = BatchTag(r.u64(), r.take(32))
        signers = bitmap_to_signers(r.lp())
        sig = r.lp()
        r.done()
        return cls(tag, sig, signers)
