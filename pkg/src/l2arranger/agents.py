"""Players that act on the simulated L1 once per block.

Every actor exposes ``on_block(l1)``. The honest agent and the honest
defender follow the constructive winning strategies for the challenge games;
``DefenderScript`` and ``Adversary`` drive the dishonest side.
"""
from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .arranger import compress, decompress, legal_batch
from .core import (ArrangerError, Batch, BatchTag, DecodeError, ElementKind, SignedBatchTag, Transaction,
                   sign_transaction, tag_message)
from .crypto import CLIENT_SCHEME, AuthFailure, KeyPair, SignatureShare, commit, dec, enc, random_key
from .l1sim import (CHALLENGER, CONFIRMED, DEFENDER, DISCARDED, OPEN, PENDING, ChoosePath, DataGame,
                    EmptyAnswer, InternalAnswer, L1Error, L1State, LeafAnswer, Mid, PathGame, Select, Witness,
                    commit_message, server_account)
from .merkle import MerkleTree, NodeRef, merkle_root

Lookup = Callable[[bytes], "Batch | None"]


class AttestationInvalid(ArrangerError):
    pass


class AdversaryBoundError(ArrangerError):
    pass


class RecordDiscarded(ArrangerError):
    pass


# zero-knowledge attestation mock

@dataclass(frozen=True)
class ZkAttestation:
    w: bytes
    y: bytes
    claimed_root: bytes
    seal: bytes


class Attestor:
    """Trusted oracle standing in for a proof system.

    It checks the relation directly (``w`` decrypts under ``k`` to a batch
    whose root is ``claimed_root`` and ``SHA256(k) = y``) and only then seals
    the statement. Verifiers never see ``k``.
    """

    def __init__(self, secret: bytes = b"attestor"):
        self._key = hashlib.sha256(b"attestor-key" + secret).digest()

    def _mac(self, w: bytes, y: bytes, root: bytes) -> bytes:
        return hmac.new(self._key, w + y + root, hashlib.sha256).digest()

    def attest(self, w: bytes, y: bytes, k: bytes, claimed_root: bytes) -> ZkAttestation:
        if commit(k) != y:
            raise AttestationInvalid("commitment mismatch")
        try:
            txs = decompress(dec(k, w))
        except (AuthFailure, DecodeError) as exc:
            raise AttestationInvalid("ciphertext does not open") from exc
        if merkle_root(txs) != claimed_root:
            raise AttestationInvalid("root mismatch")
        return ZkAttestation(w, y, claimed_root, self._mac(w, y, claimed_root))

    def verify(self, att: ZkAttestation) -> bool:
        return hmac.compare_digest(att.seal, self._mac(att.w, att.y, att.claimed_root))


@dataclass(frozen=True)
class Offer:
    server: int
    batch_id: int
    root: bytes
    attestation: ZkAttestation
    y_signature: bytes


class TranslationProvider:
    """Server side of the paid offchain translation.

    ``mode`` is ``honest``, ``refuse`` (never offers), ``ghost`` (offers but
    never reveals the key) or ``forge`` (offers with a bogus seal).
    """

    def __init__(self, index: int, keypair: KeyPair, scheme, translate: Callable[[int, bytes], Batch],
                 attestor: Attestor, rng: random.Random, mode: str = "honest"):
        self.index = index
        self.account = server_account(index)
        self.keypair = keypair
        self.scheme = scheme
        self.translate = translate
        self.attestor = attestor
        self.rng = rng
        self.mode = mode
        self._keys: dict[bytes, bytes] = {}
        self.claimed: list[int] = []

    def offer(self, batch_id: int, root: bytes) -> Offer | None:
        if self.mode == "refuse":
            return None
        try:
            batch = self.translate(batch_id, root)
        except ArrangerError:
            return None
        k = random_key(self.rng)
        y = commit(k)
        w = enc(k, compress(batch.txs), self.rng)
        if self.mode == "forge":
            att = ZkAttestation(w, y, root, bytes(32))
        else:
            att = self.attestor.attest(w, y, k, root)
        self._keys[y] = k
        return Offer(self.index, batch_id, root, att, self.scheme.sign(self.keypair.sk, commit_message(y)))

    def on_block(self, l1: L1State) -> None:
        if self.mode == "ghost":
            return
        for cid, h in sorted(l1.htlcs.items()):
            if h.beneficiary == self.account and not h.claimed and not h.withdrawn and h.secret in self._keys:
                l1.htlc_claim(self.account, cid, self._keys[h.secret])
                l1.ledger.burn(self.account, l1.cost.sc_translate)
                self.claimed.append(cid)


# trees

class TreeCache:
    def __init__(self):
        self._trees: dict[int, tuple[Batch, MerkleTree]] = {}

    def get(self, batch: Batch) -> MerkleTree:
        hit = self._trees.get(id(batch))
        if hit is None or hit[0] is not batch:
            hit = (batch, MerkleTree.build(batch))
            self._trees[id(batch)] = hit
        return hit[1]


def true_hash(tree: MerkleTree, route: Sequence[int]) -> bytes | None:
    ref = tree.node_at(tuple(route))
    return None if ref is None else tree.hash(ref)


def path_index_hash(tree: MerkleTree, route: tuple, i: int) -> bytes | None:
    """Hash of node ``i`` on the path named by ``route`` (0 = leaf end, len = root)."""
    return true_hash(tree, route[:len(route) - i])


def sibling_witness(tree: MerkleTree, route: tuple, i: int) -> bytes:
    """Sibling of path node ``i`` inside the real tree (node ``i + 1`` must be internal)."""
    parent = tree.node_at(route[:len(route) - i - 1])
    left, right = tree.child_refs(parent)
    side = route[len(route) - i - 1]
    return tree.hash(right if side == 0 else left)


def leaf_route(tree: MerkleTree, position: int) -> tuple:
    return tree.route_of(NodeRef(0, position))


def data_answer(tree: MerkleTree, batch: Batch, route: tuple, lazy: bool = False):
    if not batch.txs:
        return EmptyAnswer()
    ref = tree.node_at(route)
    if ref.level == 0:
        return LeafAnswer(batch.txs[ref.index])
    left, right = tree.child_refs(ref)
    if lazy:
        bl = br = b"\x00"
    else:
        bl = compress([batch.txs[i] for i in tree.leaf_range(left)])
        br = compress([batch.txs[i] for i in tree.leaf_range(right)])
    return InternalAnswer(tree.hash(left), tree.hash(right), bl, br)


# defenders

@dataclass
class DefenderScript:
    """How a staker plays the games.

    data: ``answer`` | ``lazy`` (right hashes, junk payloads) | ``silent`` | ``wrong``
    path: ``honest`` | ``lower`` | ``upper`` | ``alternate`` | ``random`` | ``timeout``
    choose: ``honest`` | ``first`` | ``second`` | ``random``
    """

    data: str = "answer"
    path: str = "honest"
    choose: str = "honest"
    seed: int = 0


class Defender:
    def __init__(self, account: str, lookup: Lookup, script: DefenderScript | None = None):
        self.account = account
        self.lookup = lookup
        self.script = script or DefenderScript()
        self.rng = random.Random(self.script.seed)
        self.trees = TreeCache()

    def _tree(self, root: bytes) -> tuple[Batch, MerkleTree] | tuple[None, None]:
        batch = self.lookup(root)
        if batch is None:
            return None, None
        return batch, self.trees.get(batch)

    def on_block(self, l1: L1State) -> None:
        for g in l1.open_games():
            if g.defender != self.account or g.turn != DEFENDER or l1.height > g.deadline:
                continue
            try:
                if isinstance(g, DataGame):
                    self._data(l1, g)
                else:
                    self._path(l1, g)
            except L1Error:
                pass

    def _data(self, l1: L1State, g: DataGame) -> None:
        mode = self.script.data
        if mode == "silent":
            return
        batch, tree = self._tree(l1.records[g.rid].root)
        if batch is None:
            return
        if mode == "wrong":
            l1.data_challenge_respond(self.account, g.gid, InternalAnswer(bytes(32), bytes(32)))
            return
        l1.data_challenge_respond(self.account, g.gid, data_answer(tree, batch, g.open_node, lazy=mode == "lazy"))

    def _bad(self, claim) -> bool:
        _, tree = self._tree(claim.root)
        if tree is None:
            return False
        return path_index_hash(tree, claim.route, 0) != claim.hashes[0]

    def _path(self, l1: L1State, g: PathGame) -> None:
        s = self.script
        if g.active is None:
            if s.choose == "first":
                idx = 0
            elif s.choose == "second":
                idx = 1
            elif s.choose == "random":
                idx = self.rng.randrange(len(g.claims))
            else:
                idx = next((i for i, c in enumerate(g.claims) if self._bad(c)), 0)
            l1.path_bisect_move(self.account, g.gid, ChoosePath(idx))
            return
        c = g.claims[g.active]
        if s.path == "timeout":
            return
        if s.path == "lower":
            upper = False
        elif s.path == "upper":
            upper = True
        elif s.path == "alternate":
            upper = g.selections % 2 == 1
        elif s.path == "random":
            upper = self.rng.random() < 0.5
        else:
            _, tree = self._tree(c.root)
            m = (c.lo + c.hi) // 2
            good = tree is not None and path_index_hash(tree, c.route, m) == c.hashes[m]
            # keep the top of the segment in the real tree and the bottom outside it
            upper = not good
        l1.path_bisect_move(self.account, g.gid, Select(upper))


def honest_defender(account: str, lookup: Lookup) -> Defender:
    return Defender(account, lookup, DefenderScript())


# honest agent

@dataclass
class Task:
    rid: int
    phase: str = "start"
    batch: Batch | None = None
    tried_providers: set = field(default_factory=set)
    offer: Offer | None = None
    cid: int | None = None
    data_done: set = field(default_factory=set)
    gid: int | None = None
    learned: dict = field(default_factory=dict)
    processed: set = field(default_factory=set)
    queue: list = field(default_factory=list)
    node_challenges: int = 0
    plan: tuple | None = None
    challenged: set = field(default_factory=set)
    outcome: str | None = None
    spent: int = 0
    via: str | None = None
    starved: bool = False


class HonestAgent:
    """Audits every pending tag and removes the illegal ones.

    Data comes from the paid offchain protocol when some server cooperates,
    otherwise from data-availability games against each staker in turn.
    """

    def __init__(self, account: str, providers: Sequence[TranslationProvider], attestor: Attestor,
                 scheme, server_pks: Mapping[int, bytes], rng: random.Random | None = None,
                 known_confirmed: Mapping[int, Batch] | None = None, use_offchain: bool = True):
        self.account = account
        self.providers = list(providers)
        self.attestor = attestor
        self.scheme = scheme
        self.pks = dict(server_pks)
        self.rng = rng or random.Random(0)
        self.use_offchain = use_offchain
        self.tasks: dict[int, Task] = {}
        self.confirmed: dict[int, Batch] = dict(known_confirmed or {})
        self.confirmed_index: dict[Transaction, tuple[int, int]] = {}
        self.trees = TreeCache()
        self.failures: list[tuple[int, str]] = []
        self.accusations: list[int] = []
        self._seen_confirm = 0
        for rid, b in self.confirmed.items():
            self._index(rid, b)

    def _index(self, rid: int, batch: Batch) -> None:
        for pos, tx in enumerate(batch.txs):
            self.confirmed_index.setdefault(tx, (rid, pos))

    def budget(self, l1: L1State) -> int:
        return l1.ledger.balance(self.account)

    def idle(self, l1: L1State) -> bool:
        return all(t.phase in ("done", "failed") for t in self.tasks.values()) and not any(
            r.rid not in self.tasks for r in l1.pending_records())

    def on_block(self, l1: L1State) -> None:
        if len(l1.confirmed) != self._seen_confirm:
            self._seen_confirm = len(l1.confirmed)
            for bid, rid in sorted(l1.confirmed.items()):
                t = self.tasks.get(rid)
                if rid not in self.confirmed and t is not None and t.batch is not None:
                    self.confirmed[rid] = t.batch
                    self._index(rid, t.batch)
            # a new confirmation can turn an audited tag illegal (cross-batch duplicate)
            for t in self.tasks.values():
                if t.phase == "done" and t.outcome == "legal" and l1.records[t.rid].status == PENDING:
                    t.phase = "audit"
        for rec in l1.pending_records():
            if rec.rid not in self.tasks:
                self.tasks[rec.rid] = Task(rec.rid)
        for rid in sorted(self.tasks):
            t = self.tasks[rid]
            if t.phase in ("done", "failed") and t.cid is not None:
                self._poll_htlc(l1, t)
            elif t.phase not in ("done", "failed"):
                try:
                    self._step(l1, t)
                except L1Error as exc:
                    l1.log("agent_error", rid=rid, error=type(exc).__name__)

    def settle(self, l1: L1State) -> None:
        """Close out tasks whose record resolved after the last block this agent saw."""
        for rid in sorted(self.tasks):
            t = self.tasks[rid]
            if t.phase not in ("done", "failed") and l1.records[rid].status != PENDING:
                self._step(l1, t)

    def _fail(self, l1: L1State, t: Task, reason: str) -> None:
        t.phase = "failed"
        t.outcome = reason
        self.failures.append((t.rid, reason))
        l1.log("agent_failed", rid=t.rid, reason=reason, balance=self.budget(l1))

    def _pay(self, l1: L1State, t: Task, amount: int) -> bool:
        # short of funds: retry next block, a pending reward may still arrive
        if self.budget(l1) < amount:
            t.starved = True
            return False
        t.starved = False
        t.spent += amount
        return True

    def _step(self, l1: L1State, t: Task) -> None:
        rec = l1.records[t.rid]
        if rec.status != PENDING:
            if t.cid is not None:
                self._poll_htlc(l1, t)
            if t.starved:
                self._fail(l1, t, "budget")
                return
            t.phase = "done"
            t.outcome = rec.status
            return
        if t.phase == "start":
            if not l1.certified(rec.tag):
                if self._pay(l1, t, l1.cost.cc_signature):
                    l1.signature_challenge(self.account, t.rid)
                    t.plan = ("signature",)
                return
            t.phase = "translate" if self.use_offchain else "data"
        if t.phase == "translate":
            self._translate(l1, t, rec)
        if t.phase == "data":
            self._data(l1, t, rec)
        if t.phase == "audit":
            self._audit(l1, t, rec)
        if t.phase == "challenge":
            self._challenge(l1, t, rec)

    # offchain translation

    def _translate(self, l1: L1State, t: Task, rec) -> None:
        if t.cid is not None:
            self._poll_htlc(l1, t)
            return
        cm = l1.cost
        # keep enough of the window to fall back to the data game if the exchange is not honoured
        if l1.height + l1.config.htlc_window + 2 >= rec.posted_at + l1.config.confirm_delay:
            t.phase = "data"
            return
        for p in self.providers:
            if p.index in t.tried_providers:
                continue
            t.tried_providers.add(p.index)
            offer = p.offer(rec.id, rec.root)
            if offer is None:
                continue
            if offer.root != rec.root or not self.attestor.verify(offer.attestation):
                l1.log("attestation_invalid", rid=rec.rid, server=p.index)
                continue
            if not self.scheme.verify(self.pks[p.index], commit_message(offer.attestation.y), offer.y_signature):
                continue
            if self.budget(l1) < cm.cc_translate:
                break
            t.spent += cm.cc_translate
            t.offer = offer
            t.cid = l1.htlc_deploy(self.account, server_account(p.index), offer.attestation.y,
                                   l1.height + l1.config.htlc_window, cm.sr_translate)
            l1.ledger.burn(self.account, cm.cc_translate - cm.sr_translate)
            return
        t.phase = "data"

    def _poll_htlc(self, l1: L1State, t: Task) -> None:
        h = l1.htlcs[t.cid]
        if h.revealed is not None:
            txs = decompress(dec(h.revealed, t.offer.attestation.w))
            rec = l1.records[t.rid]
            batch = Batch(rec.id, txs)
            t.cid = None
            if merkle_root(batch) == rec.root:
                t.batch = batch
                t.via = "offchain"
                if t.phase == "translate":
                    t.phase = "audit"
            return
        if l1.height > h.deadline:
            l1.htlc_withdraw(self.account, t.cid)
            try:
                l1.accuse_non_reveal(self.account, t.offer.server, h.secret, t.offer.y_signature, t.cid)
                self.accusations.append(t.cid)
            except L1Error as exc:
                l1.log("accusation_failed", cid=t.cid, error=type(exc).__name__)
            t.cid = None

    # data availability games

    def _data(self, l1: L1State, t: Task, rec) -> None:
        if t.gid is None:
            targets = [s for s in sorted(rec.stakes) if s not in t.data_done]
            if not targets:
                return
            if not self._pay(l1, t, l1.cost.cc_data):
                return
            t.data_done.add(targets[0])
            t.gid = l1.data_challenge_open(self.account, t.rid, targets[0])
            t.node_challenges = 1
            t.learned, t.processed, t.queue = {}, set(), []
            return
        g = l1.games[t.gid]
        if g.status != OPEN:
            t.gid = None
            return
        if g.turn != CHALLENGER:
            return
        self._absorb(g, t)
        txs = self._assemble(g, t, ())
        if txs is not None:
            t.batch = Batch(rec.id, txs)
            t.via = "data"
            l1.data_challenge_close(self.account, t.gid)
            t.gid = None
            t.phase = "audit"
            return
        if t.queue:
            l1.data_challenge_node(self.account, t.gid, t.queue.pop(0))
            t.node_challenges += 1

    def _absorb(self, g: DataGame, t: Task) -> None:
        for route, kind in g.answered.items():
            if route in t.processed:
                continue
            t.processed.add(route)
            if kind == "empty":
                t.learned[route] = ()
            elif kind == "leaf":
                t.learned[route] = (Transaction.deserialize(g.payloads[route]),)
            else:
                for bit in (0, 1):
                    child = route + (bit,)
                    try:
                        txs = decompress(g.payloads[child])
                    except DecodeError:
                        txs = None
                    if txs and merkle_root(txs) == g.known[child]:
                        t.learned[child] = txs
                    else:
                        t.queue.append(child)

    def _assemble(self, g: DataGame, t: Task, route: tuple):
        if route in t.learned:
            return t.learned[route]
        if g.answered.get(route) != "internal":
            return None
        left = self._assemble(g, t, route + (0,))
        right = self._assemble(g, t, route + (1,)) if left is not None else None
        return None if right is None else left + right

    # legality audit and legality games

    def _audit(self, l1: L1State, t: Task, rec) -> None:
        batch = t.batch
        options = []
        for pos, tx in enumerate(batch.txs):
            if not CLIENT_SCHEME.verify(tx.author, tx.payload, tx.signature) or not tx.payload:
                options.append((l1.cost.cc_validity, 0, ("validity", tx, pos)))
                break
        seen: dict[Transaction, int] = {}
        for pos, tx in enumerate(batch.txs):
            if tx in seen:
                options.append((l1.cost.cc_integrity, 1, ("integrity1", tx, seen[tx], pos)))
                break
            seen[tx] = pos
        for pos, tx in enumerate(batch.txs):
            if tx in self.confirmed_index and self.confirmed_index[tx][0] != rec.rid:
                ref_rid, ref_pos = self.confirmed_index[tx]
                options.append((l1.cost.cc_integrity, 2, ("integrity2", tx, pos, ref_rid, ref_pos)))
                break
        if not options:
            t.phase = "done"
            t.outcome = "legal"
            return
        t.plan = min(options, key=lambda o: (o[0], o[1]))[2]
        t.phase = "challenge"
        l1.log("agent_plan", rid=rec.rid, plan=t.plan[0])

    def _challenge(self, l1: L1State, t: Task, rec) -> None:
        if t.gid is not None:
            g = l1.games[t.gid]
            if g.status == OPEN:
                if g.turn == CHALLENGER:
                    self._path_move(l1, g, t)
                return
            t.gid = None
        targets = [s for s in sorted(rec.stakes) if s not in t.challenged]
        if not targets:
            return
        kind = t.plan[0]
        cc = l1.cost.cc("validity" if kind == "validity" else "integrity")
        if not self._pay(l1, t, cc):
            return
        defender = targets[0]
        t.challenged.add(defender)
        tree = self.trees.get(t.batch)
        if kind == "validity":
            _, tx, pos = t.plan
            route = leaf_route(tree, pos)
            t.gid = l1.validity_open(self.account, rec.rid, defender, tx, route, _mid(tree, route))
        elif kind == "integrity1":
            _, tx, p, q = t.plan
            ra, rb = leaf_route(tree, p), leaf_route(tree, q)
            t.gid = l1.integrity1_open(self.account, rec.rid, defender, tx, ra, rb,
                                       (_mid(tree, ra), _mid(tree, rb)))
        else:
            _, tx, pos, ref_rid, ref_pos = t.plan
            ref_tree = self.trees.get(self.confirmed[ref_rid])
            ra, rb = leaf_route(tree, pos), leaf_route(ref_tree, ref_pos)
            t.gid = l1.integrity2_open(self.account, rec.rid, defender, tx, ra, ref_rid, rb,
                                       (_mid(tree, ra), _mid(ref_tree, rb)))

    def _tree_for_root(self, t: Task, root: bytes) -> MerkleTree:
        tree = self.trees.get(t.batch)
        if tree.root == root:
            return tree
        for b in self.confirmed.values():
            if self.trees.get(b).root == root:
                return self.trees.get(b)
        raise KeyError(root.hex())

    def _path_move(self, l1: L1State, g: PathGame, t: Task) -> None:
        c = g.claims[g.active]
        tree = self._tree_for_root(t, c.root)
        if c.hi - c.lo >= 2:
            m = (c.lo + c.hi) // 2
            l1.path_bisect_move(self.account, g.gid, Mid(path_index_hash(tree, c.route, m)))
        else:
            l1.path_bisect_move(self.account, g.gid, Witness(sibling_witness(tree, c.route, c.lo)))


def _mid(tree: MerkleTree, route: tuple) -> bytes | None:
    if len(route) < 2:
        return None
    return path_index_hash(tree, route, len(route) // 2)


# scripted dishonest challenger

@dataclass
class ChallengerScript:
    """A challenger attacking a legal tag with a fabricated claim.

    kind: ``validity`` | ``integrity1`` | ``integrity2`` | ``data`` | ``signature``
    lie: how the fabricated path hashes are produced (``random`` | ``real``)
    """

    kind: str
    target_rid: int
    element: Transaction | None = None
    routes: tuple = ()
    ref_rid: int | None = None
    lie: str = "random"
    seed: int = 0


class DishonestChallenger:
    def __init__(self, account: str, script: ChallengerScript, lookup: Lookup):
        self.account = account
        self.script = script
        self.lookup = lookup
        self.rng = random.Random(script.seed)
        self.gid: int | None = None
        self.done = False
        self.trees = TreeCache()

    def _fake(self) -> bytes:
        return bytes(self.rng.getrandbits(8) for _ in range(32))

    def _hash_for(self, root: bytes, route: tuple, i: int) -> bytes:
        if self.script.lie == "real":
            batch = self.lookup(root)
            if batch is not None:
                h = path_index_hash(self.trees.get(batch), route, i)
                if h is not None:
                    return h
        return self._fake()

    def on_block(self, l1: L1State) -> None:
        s = self.script
        rec = l1.records[s.target_rid]
        if self.done or rec.status != PENDING:
            return
        try:
            if self.gid is None:
                self._open(l1, rec)
            else:
                self._move(l1)
        except L1Error as exc:
            l1.log("challenger_error", error=type(exc).__name__)
            self.done = True

    def _open(self, l1: L1State, rec) -> None:
        s = self.script
        defender = sorted(rec.stakes)[0]
        if s.kind == "signature":
            l1.signature_challenge(self.account, rec.rid)
            self.done = True
            return
        if s.kind == "data":
            self.gid = l1.data_challenge_open(self.account, rec.rid, defender)
            return
        e = s.element

        def mid(root, route):
            return self._hash_for(root, route, len(route) // 2) if len(route) >= 2 else None

        if s.kind == "validity":
            self.gid = l1.validity_open(self.account, rec.rid, defender, e, s.routes[0], mid(rec.root, s.routes[0]))
        elif s.kind == "integrity1":
            ra, rb = s.routes
            self.gid = l1.integrity1_open(self.account, rec.rid, defender, e, ra, rb,
                                          (mid(rec.root, ra), mid(rec.root, rb)))
        else:
            ref = l1.records[s.ref_rid]
            ra, rb = s.routes
            self.gid = l1.integrity2_open(self.account, rec.rid, defender, e, ra, s.ref_rid, rb,
                                          (mid(rec.root, ra), mid(ref.root, rb)))

    def _move(self, l1: L1State) -> None:
        g = l1.games[self.gid]
        if g.status != OPEN:
            self.done = True
            return
        if g.turn != CHALLENGER:
            return
        if isinstance(g, DataGame):
            unexplored = [r for r in g.known if r not in g.challenged]
            if unexplored:
                l1.data_challenge_node(self.account, g.gid, sorted(unexplored, key=lambda r: (len(r), r))[0])
            else:
                l1.data_challenge_close(self.account, g.gid)
            return
        c = g.claims[g.active]
        if c.hi - c.lo >= 2:
            m = (c.lo + c.hi) // 2
            l1.path_bisect_move(self.account, g.gid, Mid(self._hash_for(c.root, c.route, m)))
        else:
            batch = self.lookup(c.root)
            h = self._fake()
            if batch is not None and self.script.lie == "real":
                tree = self.trees.get(batch)
                try:
                    h = sibling_witness(tree, c.route, c.lo)
                except Exception:
                    pass
            l1.path_bisect_move(self.account, g.gid, Witness(h))


# state transition agent stub

class StfAgent:
    """Processes the first legal tag per id, posts an L2 block marker and defends it."""

    def __init__(self, account: str, translators: Sequence):
        self.account = account
        self.translators = list(translators)
        self.next_id = 1
        self.batches: dict[bytes, Batch] = {}
        self.confirmed_txs: set[Transaction] = set()
        self.staked: dict[int, int] = {}
        self.defender = Defender(account, self.batches.get)

    def _translate(self, rec) -> Batch | None:
        for node in self.translators:
            try:
                b = node.translate(rec.id, rec.root)
            except ArrangerError:
                continue
            if merkle_root(b) == rec.root:
                return b
        return None

    def on_block(self, l1: L1State) -> None:
        self.defender.on_block(l1)
        rid = self.staked.get(self.next_id)
        if rid is not None:
            rec = l1.records[rid]
            if rec.status == CONFIRMED:
                self.confirmed_txs.update(self.batches[rec.root].txs)
                self.next_id += 1
            elif rec.status == DISCARDED:
                del self.staked[self.next_id]
            return
        if self.next_id > 1 and self.next_id - 1 not in l1.confirmed:
            return
        for rec in l1.records_for(self.next_id):
            if rec.status != PENDING or not l1.certified(rec.tag):
                continue
            batch = self._translate(rec)
            if batch is None or legal_batch(batch, self.confirmed_txs):
                continue
            if l1.ledger.balance(self.account) < l1.cost.s:
                return
            self.batches[rec.root] = batch
            l1.post_l2_block(self.account, rec.rid, len(batch), l1.cost.s)
            self.staked[self.next_id] = rec.rid
            return


# adversaries

@dataclass
class AdversaryConfig:
    model: str
    controlled: tuple[int, ...]
    script: tuple[dict, ...] = ()

    def validate(self, n: int, f: int) -> None:
        k = len(set(self.controlled))
        if self.model == "ONE":
            ok = f + 1 <= k <= n - f - 1
        elif self.model == "TWO":
            ok = f + 1 <= k <= n
        else:
            raise AdversaryBoundError(f"unknown adversary model {self.model!r}")
        if not ok:
            raise AdversaryBoundError(f"model {self.model} cannot control {k} of {n} servers (f={f})")

    @classmethod
    def from_dict(cls, d: dict) -> AdversaryConfig:
        return cls(d["model"], tuple(d["controlled"]), tuple(d.get("script", ())))


def craft_batch(kind: str, base: Batch, rng: random.Random, confirmed: Sequence[Batch] = (),
                keypair: KeyPair | None = None) -> Batch:
    """Build a batch for ``base.id`` that violates one legality condition.

    kind: ``invalid_tx`` (B2), ``duplicate_tx`` (B3), ``replay_confirmed``
    (B4), ``conflicting`` (a different but legal-looking batch) or ``same``.
    """
    txs = list(base.txs)
    kp = keypair or CLIENT_SCHEME.keygen(b"adversary-client")
    if kind == "same":
        return base
    if kind == "invalid_tx":
        bad = Transaction(b"forged:%d" % rng.getrandbits(32), kp.pk, bytes(64))
        txs.insert(rng.randrange(len(txs) + 1), bad)
    elif kind == "duplicate_tx":
        if not txs:
            txs.append(sign_transaction(kp, b"dup:%d" % rng.getrandbits(32)))
        dup = txs[rng.randrange(len(txs))]
        txs.insert(rng.randrange(len(txs) + 1), dup)
    elif kind == "replay_confirmed":
        pool = [t for b in confirmed for t in b.txs]
        if not pool:
            raise ArrangerError("nothing confirmed to replay")
        txs.insert(rng.randrange(len(txs) + 1), pool[rng.randrange(len(pool))])
    elif kind == "conflicting":
        if txs:
            txs.pop(rng.randrange(len(txs)))
        else:
            txs.append(sign_transaction(kp, b"alt:%d" % rng.getrandbits(32)))
    else:
        raise ValueError(f"unknown batch mutation {kind!r}")
    return Batch(base.id, tuple(txs))


def coalition_sign(scheme, keys: Mapping[int, KeyPair], signers: Iterable[int], batch_id: int,
                   root: bytes) -> SignedBatchTag:
    msg = tag_message(batch_id, root)
    shares = [SignatureShare(i, msg, scheme.sign(keys[i].sk, msg)) for i in sorted(set(signers))]
    agg = scheme.aggregate(shares)
    return SignedBatchTag(BatchTag(batch_id, root), agg.sig, agg.signers)


class Adversary:
    """Replays a declarative fault script from the controlled servers.

    Script steps are dicts with an ``action`` key:

    * ``post`` -- ``id``, ``mutation`` (see ``craft_batch``), optional
      ``signers`` count (default: every controlled server; fewer than f+1
      makes the tag under-signed) and ``defense`` (a ``DefenderScript`` dict)
    * ``censor`` -- ``payload`` prefix; model TWO only, applied through the
      consensus override
    """

    def __init__(self, config: AdversaryConfig, n: int, f: int, scheme, keys: Mapping[int, KeyPair],
                 base_lookup: Callable[[int], Batch | None], rng: random.Random):
        config.validate(n, f)
        self.config = config
        self.n, self.f = n, f
        self.scheme = scheme
        self.keys = {i: keys[i] for i in config.controlled}
        self.base_lookup = base_lookup
        self.rng = rng
        self.batches: dict[bytes, Batch] = {}
        self.defenders: list[Defender] = []
        self.pending = [dict(s) for s in config.script if s["action"] == "post"]
        self.posted: list[dict] = []
        self.censored_prefixes = [s["payload"].encode() for s in config.script if s["action"] == "censor"]
        if self.censored_prefixes and config.model != "TWO":
            raise AdversaryBoundError("only model TWO can dictate epoch contents")

    def poster(self) -> int:
        return min(self.config.controlled)

    def lookup(self, root: bytes) -> Batch | None:
        return self.batches.get(root)

    def decide_override(self, epoch: int, decision: frozenset) -> dict[int, frozenset]:
        kept = frozenset(e for e in decision if not (
            e.kind == ElementKind.TX and any(e.body.payload.startswith(p) for p in self.censored_prefixes)))
        return {i: kept for i in range(self.n)}

    def on_block(self, l1: L1State) -> None:
        for d in self.defenders:
            d.on_block(l1)
        for step in list(self.pending):
            base = self.base_lookup(step["id"])
            if base is None:
                continue
            confirmed = [self.base_lookup(b) for b in sorted(l1.confirmed) if b < step["id"]]
            if step["mutation"] == "replay_confirmed" and not confirmed:
                continue
            batch = craft_batch(step["mutation"], base, self.rng, [b for b in confirmed if b])
            root = merkle_root(batch)
            count = step.get("signers", len(self.keys))
            signers = sorted(self.keys)[:count]
            tag = coalition_sign(self.scheme, self.keys, signers, batch.id, root)
            poster = server_account(self.poster())
            rid = l1.post_tag(poster, tag, l1.cost.s)
            self.batches[root] = batch
            self.defenders.append(Defender(poster, self.lookup, DefenderScript(**step.get("defense", {}))))
            self.pending.remove(step)
            self.posted.append({"rid": rid, **step})
            l1.log("adversary_post", rid=rid, id=batch.id, mutation=step["mutation"], signers=signers)


def incompatible_tags(l1: L1State) -> list[tuple[int, int]]:
    """Pairs of certified records that share an id but carry different roots."""
    out = []
    for bid in sorted(l1.logger):
        recs = [r for r in l1.records_for(bid) if l1.certified(r.tag)]
        for i, a in enumerate(recs):
            for b in recs[i + 1:]:
                if a.root != b.root:
                    out.append((a.rid, b.rid))
    return out
