"""Arranger implementations.

``ArrangerNode`` is the fully decentralized variant: every node is a setchain
server that turns each agreed epoch into a batch, signs its tag, gossips the
signature as a setchain element and, on its turn, posts a tag carrying at
least ``f + 1`` signatures. ``Sequencer`` plus ``DacMember`` is the
semi-decentralized baseline with a single ordering process.
"""
from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import brotli

from .core import (ArrangerError, Batch, BatchTag, DecodeError, ElementKind, EpochSignature, SetElement,
                   SignedBatchTag, Transaction, decode_txs, encode_txs, lp, tag_message, to_batch, u64,
                   validate_transaction)
from .crypto import KeyPair, SignatureShare
from .l1sim import PENDING, InsufficientStake, L1State, server_account
from .merkle import merkle_root
from .netsim import Process
from .setchain import ElementMsg, ProposeMsg, SetchainConfig, SetchainServer, CONSENSUS

BROTLI_QUALITY = 9


class InvalidId(ArrangerError):
    pass


class InvalidHash(ArrangerError):
    pass


class HashMismatch(ArrangerError):
    pass


class ReusedId(ArrangerError):
    pass


class InsufficientStakeBalance(ArrangerError):
    pass


def compress(txs: Sequence[Transaction], quality: int = BROTLI_QUALITY) -> bytes:
    return brotli.compress(encode_txs(txs), quality=quality)


def decompress(blob: bytes) -> tuple[Transaction, ...]:
    try:
        return decode_txs(brotli.decompress(blob))
    except brotli.error as exc:
        raise DecodeError("not a compressed batch") from exc


# translation wire format

STATUS_OK, STATUS_INVALID_ID, STATUS_INVALID_HASH = 0, 1, 2


def encode_request(batch_id: int, root: bytes) -> bytes:
    return lp(u64(batch_id) + root)


def decode_request(body: bytes) -> tuple[int, bytes]:
    if len(body) != 40:
        raise DecodeError("request body must be 40 bytes")
    return struct.unpack(">Q", body[:8])[0], body[8:]


def encode_response(status: int, payload: bytes = b"") -> bytes:
    return lp(bytes([status]) + payload)


def decode_response(body: bytes) -> tuple[int, bytes]:
    if not body:
        raise DecodeError("empty response")
    return body[0], body[1:]


def read_frame(recv) -> bytes | None:
    """Read one u32-length-prefixed frame using ``recv(n)``; None on clean EOF."""
    head = _read_exact(recv, 4)
    if head is None:
        return None
    body = _read_exact(recv, struct.unpack(">I", head)[0])
    if body is None:
        raise DecodeError("truncated frame")
    return body


def _read_exact(recv, n: int) -> bytes | None:
    chunks = []
    while n:
        chunk = recv(n)
        if not chunk:
            return None
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


class HashStore:
    """Inverse translations ``(id, root) -> batch``; entries are never deleted."""

    def __init__(self):
        self.hashes: dict[tuple[int, bytes], Batch] = {}
        self.by_id: dict[int, bytes] = {}
        self.by_root: dict[bytes, Batch] = {}

    def put(self, batch: Batch, root: bytes | None = None) -> bytes:
        root = root or merkle_root(batch)
        self.hashes[(batch.id, root)] = batch
        self.by_id.setdefault(batch.id, root)
        self.by_root.setdefault(root, batch)
        return root

    def translate(self, batch_id: int, root: bytes) -> Batch:
        batch = self.hashes.get((batch_id, root))
        if batch is not None:
            return batch
        if batch_id in self.by_id:
            raise InvalidHash((batch_id, root.hex()[:12]))
        raise InvalidId(batch_id)

    def lookup(self, root: bytes) -> Batch | None:
        return self.by_root.get(root)


@dataclass
class ArrangerBehavior:
    """Byzantine behaviour switches; all off means a correct node."""

    silent: bool = False
    skip_turns: bool = False
    wrong_hash_sigs: bool = False
    inject_invalid: bool = False
    equivocate: bool = False
    repost_legal: bool = False
    post_undersigned: bool = False

    @property
    def byzantine(self) -> bool:
        return any(vars(self).values())

    @classmethod
    def from_names(cls, names: Iterable[str]) -> ArrangerBehavior:
        b = cls()
        for n in names:
            if not hasattr(b, n):
                raise ValueError(f"unknown behaviour {n!r}")
            setattr(b, n, True)
        return b


class ArrangerNode(SetchainServer):
    def __init__(self, index: int, config: SetchainConfig, validator, scheme, keypair: KeyPair,
                 behavior: ArrangerBehavior | None = None, rng: random.Random | None = None):
        super().__init__(index, config, validator)
        self.scheme = scheme
        self.keypair = keypair
        self.account = server_account(index)
        self.behavior = behavior or ArrangerBehavior()
        self.rng = rng or random.Random(index)
        self.store = HashStore()
        self.signatures: dict[tuple[int, bytes], dict[int, bytes]] = {}
        self.posted: list[int] = []
        self._equivocations = 0

    @property
    def hashes(self) -> dict:
        return self.store.hashes

    def translate(self, batch_id: int, root: bytes) -> Batch:
        return self.store.translate(batch_id, root)

    def lookup(self, root: bytes) -> Batch | None:
        return self.store.lookup(root)

    def arranger_add(self, tx: Transaction) -> bool:
        return self.add(SetElement.tx(tx))

    # setchain hooks

    def on_newepoch(self, epoch: int, elements: frozenset) -> None:
        batch = to_batch(epoch, elements)
        root = self.store.put(batch)
        signed_root = root
        if self.behavior.wrong_hash_sigs:
            signed_root = bytes(self.rng.getrandbits(8) for _ in range(32))
        sig = self.scheme.sign(self.keypair.sk, tag_message(epoch, signed_root))
        self.sim.log("sign", server=self.index, epoch=epoch, root=signed_root, txs=len(batch))
        self.add(SetElement.meta(EpochSignature(epoch, signed_root, self.index, sig)))

    def on_added(self, element: SetElement) -> None:
        if element.kind != ElementKind.META_SIGNATURE:
            return
        s = element.body
        self.signatures.setdefault((s.epoch, s.root), {})[s.signer] = s.signature

    # Byzantine setchain behaviour

    def on_message(self, sim, sender, msg):
        if self.behavior.silent:
            return
        super().on_message(sim, sender, msg)

    def on_timer(self, sim, tag):
        if self.behavior.silent:
            return
        super().on_timer(sim, tag)

    def _propose_next(self) -> None:
        if self.behavior.silent:
            return
        if not (self.behavior.inject_invalid or self.behavior.equivocate):
            return super()._propose_next()
        target = self.epoch + 1
        if target in self._proposed:
            return
        self._proposed.add(target)
        extra = set()
        if self.behavior.inject_invalid:
            bad = self._invalid_element(target)
            extra.add(bad)
            self.sim.broadcast(self.pid, self.peers(), ElementMsg(bad))
        if self.behavior.equivocate and self._equivocations < 2:
            self._equivocations += 1
            from .core import sign_transaction
            from .crypto import CLIENT_SCHEME

            kp = CLIENT_SCHEME.keygen(b"equivocator" + self.pid.encode())
            peers = self.peers()
            half = len(peers) // 2
            for i, group in enumerate((peers[:half], peers[half:])):
                tx = sign_transaction(kp, f"eq:{self.index}:{target}:{i}".encode())
                for p in group:
                    self.sim.send(self.pid, p, ElementMsg(SetElement.tx(tx)))
            extra.add(SetElement.tx(sign_transaction(kp, f"eq:{self.index}:{target}:p".encode())))
        self.sim.send(self.pid, CONSENSUS, ProposeMsg(target, frozenset(self.pending | extra)))

    def _invalid_element(self, epoch: int) -> SetElement:
        tx = Transaction(f"bogus:{self.index}:{epoch}".encode(), self.keypair.pk, b"\x00" * 64)
        return SetElement.tx(tx)

    # posting

    def next_batch(self, l1: L1State) -> int:
        """Smallest id without a confirmed tag or a pending certified tag for our root."""
        k = 1
        while True:
            if k not in l1.confirmed:
                mine = self.store.by_id.get(k)
                if not any(r.status == PENDING and r.root == mine and l1.certified(r.tag)
                           for r in l1.records_for(k)):
                    return k
            k += 1

    def ready_tag(self, l1: L1State) -> SignedBatchTag | None:
        k = self.next_batch(l1)
        root = self.store.by_id.get(k)
        if root is None:
            return None
        sigs = self.signatures.get((k, root), {})
        if len(sigs) < self.config.f + 1:
            return None
        shares = [SignatureShare(s, tag_message(k, root), sigs[s]) for s in sorted(sigs)]
        agg = self.scheme.aggregate(shares)
        return SignedBatchTag(BatchTag(k, root), agg.sig, agg.signers)

    def has_work(self, l1: L1State) -> bool:
        return self.next_batch(l1) in self.store.by_id

    def on_myturn(self, l1: L1State) -> int | None:
        b = self.behavior
        if b.silent or b.skip_turns:
            return None
        if b.post_undersigned:
            return self._post_undersigned(l1)
        if b.repost_legal:
            mine = {(l1.records[r].id, l1.records[r].root) for r in self.posted}
            for r in l1.pending_records():
                if l1.certified(r.tag) and r.poster != self.account and (r.id, r.root) not in mine:
                    return self._post(l1, r.tag)
        tag = self.ready_tag(l1)
        if tag is None:
            return None
        return self._post(l1, tag)

    def _post_undersigned(self, l1: L1State) -> int | None:
        k = self.next_batch(l1)
        root = self.store.by_id.get(k)
        if root is None or k in l1.confirmed or l1.records_for(k):
            return None
        sig = self.scheme.sign(self.keypair.sk, tag_message(k, root))
        agg = self.scheme.aggregate([SignatureShare(self.index, tag_message(k, root), sig)])
        return self._post(l1, SignedBatchTag(BatchTag(k, root), agg.sig, agg.signers))

    def _post(self, l1: L1State, tag: SignedBatchTag) -> int:
        try:
            rid = l1.post_tag(self.account, tag, l1.cost.s)
        except InsufficientStake as exc:
            raise InsufficientStakeBalance(self.account) from exc
        self.posted.append(rid)
        self.sim.log("post", server=self.index, rid=rid, id=tag.id, root=tag.root, signers=list(tag.signers))
        return rid


# semi-decentralized baseline

@dataclass(frozen=True)
class SignRequest:
    batch: Batch
    root: bytes


@dataclass(frozen=True)
class SignReply:
    batch_id: int
    root: bytes
    signer: int
    signature: bytes


def dac_pid(i: int) -> str:
    return f"dac:{i}"


SEQUENCER = "sequencer"


class DacMember(Process):
    def __init__(self, index: int, scheme, keypair: KeyPair, silent: bool = False):
        self.index = index
        self.pid = dac_pid(index)
        self.account = server_account(index)
        self.scheme = scheme
        self.keypair = keypair
        self.silent = silent
        self.store = HashStore()
        self.used: set[int] = set()

    def sign_request(self, batch_id: int, root: bytes, batch: Batch) -> bytes:
        if merkle_root(batch) != root or batch.id != batch_id:
            raise HashMismatch(batch_id)
        if batch_id in self.used:
            raise ReusedId(batch_id)
        self.used.add(batch_id)
        self.store.put(batch, root)
        return self.scheme.sign(self.keypair.sk, tag_message(batch_id, root))

    def translate(self, batch_id: int, root: bytes) -> Batch:
        return self.store.translate(batch_id, root)

    def lookup(self, root: bytes) -> Batch | None:
        return self.store.lookup(root)

    def on_message(self, sim, sender, msg):
        if self.silent or not isinstance(msg, SignRequest) or sender != SEQUENCER:
            return
        try:
            sig = self.sign_request(msg.batch.id, msg.root, msg.batch)
        except (HashMismatch, ReusedId) as exc:
            sim.log("dac_refuse", member=self.index, id=msg.batch.id, reason=type(exc).__name__)
            return
        sim.send(self.pid, SEQUENCER, SignReply(msg.batch.id, msg.root, self.index, sig))


@dataclass
class SequencerConfig:
    n: int
    f: int
    threshold: int = 16
    timeout: int = 100


class Sequencer(Process):
    pid = SEQUENCER
    account = "sequencer"

    def __init__(self, config: SequencerConfig, scheme):
        self.config = config
        self.scheme = scheme
        self.all_txs: set[Transaction] = set()
        self.pending_txs: list[Transaction] = []
        self.batch_id = 1
        self.in_flight: tuple[Batch, bytes] | None = None
        self.replies: dict[int, bytes] = {}
        self.ready: list[SignedBatchTag] = []
        self.posted: list[int] = []
        self.store = HashStore()
        self._timer = False
        self.sim = None

    def add(self, tx: Transaction) -> bool:
        if not validate_transaction(tx) or tx in self.all_txs:
            return False
        self.all_txs.add(tx)
        self.pending_txs.append(tx)
        self.sim.log("seq_add", tx=tx.digest[:8])
        if len(self.pending_txs) >= self.config.threshold:
            self._time_to_post()
        elif not self._timer:
            self._timer = True
            self.sim.set_timer(self.pid, self.config.timeout, "timetopost")
        return True

    def on_timer(self, sim, tag):
        self._timer = False
        if self.pending_txs:
            self._time_to_post()

    def _time_to_post(self) -> None:
        if self.in_flight is not None or not self.pending_txs:
            return
        batch = Batch(self.batch_id, tuple(self.pending_txs))
        root = self.store.put(batch)
        self.in_flight = (batch, root)
        self.replies = {}
        self.sim.log("seq_batch", id=batch.id, root=root, txs=len(batch))
        self.sim.broadcast(self.pid, [dac_pid(i) for i in range(self.config.n)], SignRequest(batch, root))

    def on_message(self, sim, sender, msg):
        if not isinstance(msg, SignReply) or self.in_flight is None:
            return
        batch, root = self.in_flight
        if (msg.batch_id, msg.root) != (batch.id, root) or sender != dac_pid(msg.signer):
            return
        self.replies[msg.signer] = msg.signature
        if len(self.replies) < self.config.f + 1:
            return
        shares = [SignatureShare(s, tag_message(batch.id, root), self.replies[s]) for s in sorted(self.replies)]
        agg = self.scheme.aggregate(shares)
        self.ready.append(SignedBatchTag(BatchTag(batch.id, root), agg.sig, agg.signers))
        sim.log("seq_signed", id=batch.id, signers=list(agg.signers))
        done = set(batch.txs)
        self.pending_txs = [t for t in self.pending_txs if t not in done]
        self.batch_id += 1
        self.in_flight = None
        if self.pending_txs:
            self._timer = True
            sim.set_timer(self.pid, self.config.timeout, "timetopost")

    def lookup(self, root: bytes) -> Batch | None:
        return self.store.lookup(root)

    def has_work(self, l1: L1State) -> bool:
        return bool(self.ready)

    def on_block(self, l1: L1State) -> None:
        while self.ready:
            tag = self.ready.pop(0)
            rid = l1.post_tag(self.account, tag, l1.cost.s)
            self.posted.append(rid)
            self.sim.log("post", server=-1, rid=rid, id=tag.id, root=tag.root, signers=list(tag.signers))


def legal_batch(batch: Batch, confirmed_txs: set[Transaction]) -> list[str]:
    """Which of B2..B4 the batch violates (empty when it satisfies all three)."""
    bad = []
    if any(not validate_transaction(t) for t in batch.txs):
        bad.append("B2")
    if len(set(batch.txs)) != len(batch.txs):
        bad.append("B3")
    if any(t in confirmed_txs for t in batch.txs):
        bad.append("B4")
    return bad

