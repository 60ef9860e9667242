"""Hashing, aggregatable signatures, authenticated encryption and commitments.

Two signature backends share one interface:

* ``ed25519`` -- deterministic Ed25519 signatures; an aggregate is the
  concatenation of the individual signatures in ascending signer order.
  Cheap and reproducible, used by the simulator.
* ``bls`` -- BLS12-381 (proof-of-possession scheme) via ``blspy``; a real
  constant-size aggregate, used by the benchmarks.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .core import ArrangerError

NONCE_BYTES = 12
KEY_BYTES = 32


class MixedMessages(ArrangerError):
    pass


class UnknownSigner(ArrangerError):
    pass


class AuthFailure(ArrangerError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    sk: bytes
    pk: bytes


@dataclass(frozen=True)
class SignatureShare:
    signer: int
    message: bytes
    signature: bytes


@dataclass(frozen=True)
class AggregateSignature:
    signers: tuple[int, ...]
    sig: bytes


class Ed25519Scheme:
    name = "ed25519"

    def keygen(self, seed: bytes) -> KeyPair:
        sk = Ed25519PrivateKey.from_private_bytes(sha256(b"ed25519-keygen" + seed))
        pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return KeyPair(sk.private_bytes_raw(), pk)

    def sign(self, sk: bytes, message: bytes) -> bytes:
        return _ed_private(sk).sign(message)

    def verify(self, pk: bytes, message: bytes, sig: bytes) -> bool:
        return _ed_verify(bytes(pk), bytes(message), bytes(sig))

    def aggregate(self, shares: Iterable[SignatureShare]) -> AggregateSignature:
        shares = _check_shares(shares)
        return AggregateSignature(
            tuple(s.signer for s in shares), b"".join(s.signature for s in shares)
        )

    def aggregate_verify(self, pks: Mapping[int, bytes], agg: AggregateSignature, message: bytes) -> bool:
        signers = _check_signers(pks, agg)
        if not signers or len(agg.sig) != 64 * len(signers):
            return False
        return all(
            self.verify(pks[s], message, agg.sig[64 * i:64 * (i + 1)]) for i, s in enumerate(signers)
        )


@lru_cache(maxsize=4096)
def _ed_private(sk: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(sk)


@lru_cache(maxsize=1 << 16)
def _ed_verify(pk: bytes, message: bytes, sig: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(pk).verify(sig, message)
    except (InvalidSignature, ValueError):
        return False
    return True


class BlsScheme:
    """BLS signatures on BLS12-381 using the proof-of-possession ciphersuite.

    Same-message aggregation is sound here because every arranger key is
    registered up front; rogue keys are out of the threat model.
    """

    name = "bls"

    def __init__(self):
        import blspy

        self._b = blspy
        self._mpl = blspy.PopSchemeMPL

    def keygen(self, seed: bytes) -> KeyPair:
        sk = self._mpl.key_gen(sha256(b"bls-keygen" + seed))
        return KeyPair(bytes(sk), bytes(sk.get_g1()))

    def sign(self, sk: bytes, message: bytes) -> bytes:
        return bytes(self._mpl.sign(self._b.PrivateKey.from_bytes(sk), message))

    def verify(self, pk: bytes, message: bytes, sig: bytes) -> bool:
        try:
            return self._mpl.verify(
                self._b.G1Element.from_bytes(pk), message, self._b.G2Element.from_bytes(sig)
            )
        except (ValueError, RuntimeError):
            return False

    def aggregate(self, shares: Iterable[SignatureShare]) -> AggregateSignature:
        shares = _check_shares(shares)
        agg = self._mpl.aggregate([self._b.G2Element.from_bytes(s.signature) for s in shares])
        return AggregateSignature(tuple(s.signer for s in shares), bytes(agg))

    def aggregate_verify(self, pks: Mapping[int, bytes], agg: AggregateSignature, message: bytes) -> bool:
        signers = _check_signers(pks, agg)
        if not signers:
            return False
        try:
            keys = [self._b.G1Element.from_bytes(pks[s]) for s in signers]
            return self._mpl.fast_aggregate_verify(keys, message, self._b.G2Element.from_bytes(agg.sig))
        except (ValueError, RuntimeError):
            return False


def _check_shares(shares: Iterable[SignatureShare]) -> list[SignatureShare]:
    shares = sorted(shares, key=lambda s: s.signer)
    if len({s.message for s in shares}) > 1:
        raise MixedMessages("shares sign different messages")
    if len({s.signer for s in shares}) != len(shares):
        raise ArrangerError("duplicate signer in aggregate")
    return shares


def _check_signers(pks: Mapping[int, bytes], agg: AggregateSignature) -> tuple[int, ...]:
    for s in agg.signers:
        if s not in pks:
            raise UnknownSigner(s)
    if list(agg.signers) != sorted(set(agg.signers)):
        return ()
    return agg.signers


CLIENT_SCHEME = Ed25519Scheme()
_SCHEMES: dict[str, object] = {"ed25519": CLIENT_SCHEME}


def get_scheme(name: str):
    if name not in _SCHEMES:
        if name != "bls":
            raise ValueError(f"unknown signature scheme {name!r}")
        _SCHEMES[name] = BlsScheme()
    return _SCHEMES[name]


def random_key(rng: random.Random) -> bytes:
    return rng.getrandbits(8 * KEY_BYTES).to_bytes(KEY_BYTES, "big")


def enc(key: bytes, plaintext: bytes, rng: random.Random) -> bytes:
    """AES-256-GCM; the 96-bit nonce is drawn from ``rng`` and prefixed."""
    if len(key) != KEY_BYTES:
        raise ValueError("key must be 32 bytes")
    nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
    return nonce + AESGCM(key).encrypt(nonce, plaintext, None)


def dec(key: bytes, ciphertext: bytes) -> bytes:
    if len(key) != KEY_BYTES or len(ciphertext) < NONCE_BYTES + 16:
        raise AuthFailure("malformed key or ciphertext")
    try:
        return AESGCM(key).decrypt(ciphertext[:NONCE_BYTES], ciphertext[NONCE_BYTES:], None)
    except InvalidTag as exc:
        raise AuthFailure("authentication failed") from exc


def commit(key: bytes) -> bytes:
    """Hash commitment ``y = SHA256(k)``."""
    return sha256(key)
