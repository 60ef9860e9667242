"""Simulated L1: block clock, optimistic logger, stakes, challenge games and HTLCs.

The contracts here know nothing about batch sizes. Merkle nodes are named by
their route from the root (a tuple of 0/1 child choices), and every claim a
player makes is checked only with the hash predicates the real contracts
would run. Nothing is ever looked up off-chain.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

from .core import ArrangerError, SignedBatchTag, Transaction, tag_message, validate_transaction
from .crypto import AggregateSignature, UnknownSigner, sha256
from .incentives import CostModel, Ledger, RewardParams, distribute_rewards, slash
from .merkle import EMPTY_ROOT, leaf_hash, midpoint, node_hash, verify_parent
from .netsim import _jsonable

Route = tuple

PENDING, CONFIRMED, DISCARDED = "pending", "confirmed", "discarded"
OPEN, CHALLENGER, DEFENDER, CANCELLED = "open", "challenger", "defender", "cancelled"


class L1Error(ArrangerError):
    pass


class InsufficientStake(L1Error):
    pass


class TagNotPending(L1Error):
    pass


class NotStaker(L1Error):
    pass


class AlreadyChallenged(L1Error):
    pass


class NotYourTurn(L1Error):
    pass


class BadMove(L1Error):
    pass


class RefNotConfirmed(L1Error):
    pass


class SamePosition(L1Error):
    pass


class WrongPreimage(L1Error):
    pass


class NotBeneficiary(L1Error):
    pass


class NotOwner(L1Error):
    pass


class DeadlineNotPassed(L1Error):
    pass


class SignatureInvalid(L1Error):
    pass


class AccusationRejected(L1Error):
    pass


def server_account(i: int) -> str:
    return f"server:{i}"


def commit_message(y: bytes) -> bytes:
    """What a translation server signs to bind itself to a key commitment."""
    return b"L2ARR-COMMIT" + y


@dataclass
class L1Config:
    confirm_delay: int = 20
    move_deadline: int = 2
    htlc_window: int = 4
    require_order: bool = True


@dataclass
class L2Block:
    stf: str
    tx_count: int
    marker: bytes
    status: str = PENDING


@dataclass
class TagRecord:
    rid: int
    tag: SignedBatchTag
    poster: str
    posted_at: int
    stakes: dict[str, int] = field(default_factory=dict)
    status: str = PENDING
    l2_blocks: list[L2Block] = field(default_factory=list)
    games: set[int] = field(default_factory=set)
    closed_at: int | None = None

    @property
    def id(self) -> int:
        return self.tag.id

    @property
    def root(self) -> bytes:
        return self.tag.root


# data-availability game answers

@dataclass(frozen=True)
class LeafAnswer:
    tx: Transaction


@dataclass(frozen=True)
class InternalAnswer:
    hl: bytes
    hr: bytes
    bl: bytes = b""
    br: bytes = b""


@dataclass(frozen=True)
class EmptyAnswer:
    pass


# bisection moves

@dataclass(frozen=True)
class ChoosePath:
    index: int


@dataclass(frozen=True)
class Select:
    upper: bool


@dataclass(frozen=True)
class Mid:
    hash: bytes


@dataclass(frozen=True)
class Witness:
    hash: bytes


@dataclass
class Game:
    gid: int
    kind: str
    rid: int
    challenger: str
    defender: str
    turn: str
    deadline: int
    status: str = OPEN
    sc_paid: bool = False
    moves: int = 0

    @property
    def cost_kind(self) -> str:
        return "integrity" if self.kind.startswith("integrity") else self.kind


@dataclass
class DataGame(Game):
    known: dict = field(default_factory=dict)
    answered: dict = field(default_factory=dict)
    payloads: dict = field(default_factory=dict)
    challenged: list = field(default_factory=list)
    open_node: tuple | None = ()
    bytes_posted: int = 0


@dataclass
class PathClaim:
    root: bytes
    route: tuple
    hashes: dict[int, bytes]
    lo: int = 0
    hi: int = 0

    def __post_init__(self):
        self.hi = len(self.route)

    @property
    def length(self) -> int:
        return len(self.route)

    def side(self, i: int) -> int:
        """Whether node ``i`` is the left (0) or right (1) child of node ``i + 1``."""
        return self.route[self.length - i - 1]


@dataclass
class PathGame(Game):
    element: Transaction | None = None
    claims: list[PathClaim] = field(default_factory=list)
    active: int | None = None
    ref_rid: int | None = None
    selections: int = 0


@dataclass
class Htlc:
    cid: int
    owner: str
    beneficiary: str
    secret: bytes
    deadline: int
    revealed: bytes | None = None
    claimed: bool = False
    withdrawn: bool = False
    accused: bool = False


class L1State:
    def __init__(self, n: int, f: int, server_pks: Mapping[int, bytes], scheme,
                 ledger: Ledger, cost: CostModel | None = None,
                 rewards: RewardParams | None = None, config: L1Config | None = None,
                 sink: Callable[[dict], None] | None = None):
        self.n = n
        self.f = f
        self.pks = dict(server_pks)
        self.scheme = scheme
        self.ledger = ledger
        self.cost = cost or CostModel()
        self.rewards = rewards or RewardParams()
        self.config = config or L1Config()
        self.sink = sink
        self.height = 0
        self.records: dict[int, TagRecord] = {}
        self.logger: dict[int, list[int]] = {}
        self.confirmed: dict[int, int] = {}
        self.games: dict[int, Game] = {}
        self.htlcs: dict[int, Htlc] = {}
        self.events: list[dict] = []
        self._ids = 0
        ledger.events = _LedgerTap(self, ledger.events)

    def _next_id(self) -> int:
        self._ids += 1
        return self._ids

    def log(self, kind: str, **payload) -> None:
        rec = {"block": self.height, "kind": kind, **_jsonable(payload)}
        self.events.append(rec)
        if self.sink:
            self.sink(rec)

    # queries

    def certified(self, tag: SignedBatchTag) -> bool:
        if len(tag.signers) < self.f + 1:
            return False
        agg = AggregateSignature(tag.signers, tag.sig)
        try:
            return self.scheme.aggregate_verify(self.pks, agg, tag_message(tag.id, tag.root))
        except UnknownSigner:
            return False

    def records_for(self, batch_id: int) -> list[TagRecord]:
        return [self.records[r] for r in self.logger.get(batch_id, [])]

    def pending_records(self) -> list[TagRecord]:
        return [r for r in self.records.values() if r.status == PENDING]

    def open_games(self) -> list[Game]:
        return [g for g in self.games.values() if g.status == OPEN]

    def busy(self) -> bool:
        return bool(self.pending_records() or self.open_games()
                    or any(not (h.claimed or h.withdrawn) for h in self.htlcs.values()))

    # logger and stakes

    def post_tag(self, poster: str, tag: SignedBatchTag, stake: int) -> int:
        if stake < self.cost.s or self.ledger.balance(poster) < stake:
            raise InsufficientStake(f"{poster} cannot stake {stake}")
        rid = self._next_id()
        self.ledger.lock(poster, f"stake:{rid}:{poster}", stake)
        rec = TagRecord(rid, tag, poster, self.height, {poster: stake})
        self.records[rid] = rec
        self.logger.setdefault(tag.id, []).append(rid)
        self.log("post_tag", rid=rid, id=tag.id, root=tag.root, poster=poster,
                 signers=list(tag.signers), stake=stake)
        return rid

    def stake_on(self, acct: str, rid: int, amount: int) -> None:
        rec = self._pending(rid)
        if amount < self.cost.s or self.ledger.balance(acct) < amount:
            raise InsufficientStake(f"{acct} cannot stake {amount}")
        self.ledger.lock(acct, f"stake:{rid}:{acct}", amount)
        rec.stakes[acct] = rec.stakes.get(acct, 0) + amount
        self.log("stake", rid=rid, account=acct, amount=amount)

    def post_l2_block(self, stf: str, rid: int, tx_count: int, stake: int) -> L2Block:
        rec = self._pending(rid)
        self.stake_on(stf, rid, stake)
        marker = sha256(b"L2BLOCK" + rec.root + stf.encode())
        block = L2Block(stf, tx_count, marker)
        rec.l2_blocks.append(block)
        self.log("l2_block", rid=rid, stf=stf, tx_count=tx_count, marker=marker)
        return block

    def _pending(self, rid: int) -> TagRecord:
        rec = self.records.get(rid)
        if rec is None or rec.status != PENDING:
            raise TagNotPending(rid)
        return rec

    # clock

    def advance_block(self) -> int:
        self.height += 1
        self._confirmations()
        for g in sorted(self.open_games(), key=lambda g: g.gid):
            if g.status == OPEN and self.height > g.deadline:
                self.log("timeout", gid=g.gid, loser=g.turn)
                self._resolve(g, DEFENDER if g.turn == CHALLENGER else CHALLENGER)
        return self.height

    def _confirmations(self) -> None:
        for bid in sorted(self.logger):
            if bid in self.confirmed:
                continue
            if self.config.require_order and bid > 1:
                prev = self.confirmed.get(bid - 1)
                # give auditors one block to react to the predecessor's confirmation
                if prev is None or self.records[prev].closed_at >= self.height:
                    continue
            for rid in self.logger[bid]:
                rec = self.records[rid]
                if (rec.status == PENDING and rec.stakes and self.height - rec.posted_at >= self.config.confirm_delay
                        and not any(self.games[g].status == OPEN for g in rec.games)):
                    self._confirm(rec)
                    break

    def _confirm(self, rec: TagRecord) -> None:
        rec.status = CONFIRMED
        rec.closed_at = self.height
        self.confirmed[rec.id] = rec.rid
        for acct in sorted(rec.stakes):
            self.ledger.release(f"stake:{rec.rid}:{acct}", acct)
        for b in rec.l2_blocks:
            b.status = CONFIRMED
        n_txs = rec.l2_blocks[0].tx_count if rec.l2_blocks else 0
        deltas = distribute_rewards(self.ledger, self.rewards, [server_account(i) for i in range(self.n)],
                                    [server_account(i) for i in rec.tag.signers], rec.poster, n_txs)
        self.log("confirm", rid=rec.rid, id=rec.id, root=rec.root, rewards=deltas)
        for rid in self.logger[rec.id]:
            other = self.records[rid]
            if other.status == PENDING:
                self._discard(other, "rival confirmed", refund=True)

    def _discard(self, rec: TagRecord, reason: str, refund: bool) -> None:
        rec.status = DISCARDED
        rec.closed_at = self.height
        for acct in sorted(rec.stakes):
            key = f"stake:{rec.rid}:{acct}"
            if refund:
                self.ledger.release(key, acct)
            else:
                self.ledger.burn_escrow(key)
        rec.stakes.clear()
        for b in rec.l2_blocks:
            b.status = DISCARDED
        for gid in sorted(rec.games):
            g = self.games[gid]
            if g.status == OPEN:
                g.status = CANCELLED
                self.ledger.release(f"cc:{gid}", g.challenger)
                self.log("game_cancelled", gid=gid)
        self.log("discard", rid=rec.rid, id=rec.id, reason=reason)

    # game plumbing

    def _open_game(self, game: Game) -> None:
        rec = self._pending(game.rid)
        if game.defender not in rec.stakes:
            raise NotStaker(game.defender)
        cc = self.cost.cc(game.cost_kind)
        self.ledger.lock(game.challenger, f"cc:{game.gid}", cc)
        self.games[game.gid] = game
        rec.games.add(game.gid)

    def _set_turn(self, g: Game, who: str) -> None:
        g.turn = who
        g.deadline = self.height + self.config.move_deadline

    def _game(self, gid: int, player: str, kind: type) -> Game:
        g = self.games.get(gid)
        if not isinstance(g, kind) or g.status != OPEN:
            raise BadMove(f"no open game {gid}")
        who = g.challenger if g.turn == CHALLENGER else g.defender
        if player != who or self.height > g.deadline:
            raise NotYourTurn(f"{player} on game {gid}")
        return g

    def _charge_defender(self, g: Game) -> None:
        if not g.sc_paid:
            self.ledger.burn(g.defender, self.cost.sc(g.cost_kind))
            g.sc_paid = True

    def _resolve(self, g: Game, winner: str) -> None:
        g.status = winner
        rec = self.records[g.rid]
        cc_key = f"cc:{g.gid}"
        if winner == DEFENDER:
            self.ledger.release(cc_key, g.defender)
            self.log("game_over", gid=g.gid, winner=winner)
            return
        self.ledger.burn_escrow(cc_key)
        paid = {}
        if g.defender in rec.stakes:
            paid = slash(self.ledger, f"stake:{rec.rid}:{g.defender}", g.challenger, self.cost.cr(g.cost_kind))
            del rec.stakes[g.defender]
        self.log("game_over", gid=g.gid, winner=winner, slashed=g.defender, paid=paid)
        if rec.status == PENDING and not rec.stakes:
            self._discard(rec, "no stake left", refund=False)

    # data availability game

    def data_challenge_open(self, challenger: str, rid: int, defender: str, route: tuple = ()) -> int:
        if route != ():
            raise BadMove("a data game opens on the root")
        rec = self._pending(rid)
        for gid in rec.games:
            g = self.games[gid]
            if isinstance(g, DataGame) and g.challenger == challenger and g.defender == defender:
                raise AlreadyChallenged((rid, defender))
        g = DataGame(self._next_id(), "data", rid, challenger, defender, DEFENDER,
                     self.height + self.config.move_deadline)
        g.known[()] = rec.root
        g.challenged.append(())
        self._open_game(g)
        self.log("data_open", gid=g.gid, rid=rid, challenger=challenger, defender=defender)
        return g.gid

    def data_challenge_node(self, challenger: str, gid: int, route: tuple) -> None:
        g = self._game(gid, challenger, DataGame)
        route = tuple(route)
        if route in g.challenged:
            raise AlreadyChallenged(route)
        if route not in g.known:
            raise BadMove(f"node {route} was never revealed")
        g.challenged.append(route)
        g.open_node = route
        g.moves += 1
        self._set_turn(g, DEFENDER)
        self.log("data_challenge", gid=gid, route=route)

    def data_challenge_respond(self, defender: str, gid: int, answer) -> str:
        g = self._game(gid, defender, DataGame)
        self._charge_defender(g)
        node = g.open_node
        h = g.known[node]
        g.moves += 1
        if isinstance(answer, LeafAnswer):
            ok = leaf_hash(answer.tx) == h
            if ok:
                g.answered[node] = "leaf"
                g.payloads[node] = answer.tx.serialize()
                g.bytes_posted += len(g.payloads[node])
        elif isinstance(answer, InternalAnswer):
            ok = verify_parent(h, answer.hl, answer.hr)
            if ok:
                g.answered[node] = "internal"
                g.known[node + (0,)] = answer.hl
                g.known[node + (1,)] = answer.hr
                g.payloads[node + (0,)] = answer.bl
                g.payloads[node + (1,)] = answer.br
                g.bytes_posted += len(answer.bl) + len(answer.br)
        elif isinstance(answer, EmptyAnswer):
            ok = node == () and h == EMPTY_ROOT
            if ok:
                g.answered[node] = "empty"
        else:
            raise BadMove(f"unknown answer {answer!r}")
        self.log("data_answer", gid=gid, route=node, answer=type(answer).__name__, ok=ok)
        if not ok:
            self.log("hash_check_failed", gid=gid, route=node)
            self._resolve(g, CHALLENGER)
            return g.status
        g.open_node = None
        self._set_turn(g, CHALLENGER)
        return g.status

    def data_challenge_close(self, challenger: str, gid: int) -> None:
        g = self._game(gid, challenger, DataGame)
        self.log("data_close", gid=gid)
        self._resolve(g, DEFENDER)

    # signature game

    def signature_challenge(self, challenger: str, rid: int) -> str:
        rec = self._pending(rid)
        self.ledger.burn(challenger, self.cost.cc_signature)
        if self.certified(rec.tag):
            self.log("signature_challenge", rid=rid, challenger=challenger, verdict="legal")
            return DEFENDER
        # the reward is capped by the signature reward and by the stakes on the tag
        cap = self.cost.cr_signature
        paid = 0
        slashed = sorted(rec.stakes)
        for acct in slashed:
            got = slash(self.ledger, f"stake:{rid}:{acct}", challenger, cap - paid)
            paid += got[challenger]
        rec.stakes.clear()
        self.log("signature_challenge", rid=rid, challenger=challenger, verdict="illegal",
                 slashed=slashed, paid=paid)
        self._discard(rec, "signature challenge", refund=False)
        return CHALLENGER

    # bisection games

    def validity_open(self, challenger: str, rid: int, defender: str, e: Transaction,
                      route: tuple, mid: bytes | None = None) -> int:
        rec = self._pending(rid)
        claim = self._claim(rec.root, e, route, mid)
        g = PathGame(self._next_id(), "validity", rid, challenger, defender, DEFENDER,
                     self.height + self.config.move_deadline, element=e, claims=[claim])
        self._open_game(g)
        self.log("validity_open", gid=g.gid, rid=rid, challenger=challenger, defender=defender,
                 element=e.digest, route=route)
        if validate_transaction(e):
            self.log("element_actually_valid", gid=g.gid)
            self._resolve(g, DEFENDER)
            return g.gid
        self._activate(g, 0)
        return g.gid

    def integrity1_open(self, challenger: str, rid: int, defender: str, e: Transaction,
                        route_a: tuple, route_b: tuple,
                        mids: tuple[bytes | None, bytes | None] = (None, None)) -> int:
        if tuple(route_a) == tuple(route_b):
            raise SamePosition(route_a)
        rec = self._pending(rid)
        claims = [self._claim(rec.root, e, route_a, mids[0]), self._claim(rec.root, e, route_b, mids[1])]
        g = PathGame(self._next_id(), "integrity1", rid, challenger, defender, DEFENDER,
                     self.height + self.config.move_deadline, element=e, claims=claims)
        self._open_game(g)
        self.log("integrity1_open", gid=g.gid, rid=rid, challenger=challenger, defender=defender,
                 element=e.digest, routes=[route_a, route_b])
        return g.gid

    def integrity2_open(self, challenger: str, rid: int, defender: str, e: Transaction, route: tuple,
                        ref_rid: int, route_prev: tuple,
                        mids: tuple[bytes | None, bytes | None] = (None, None)) -> int:
        ref = self.records.get(ref_rid)
        if ref is None or ref.status != CONFIRMED:
            raise RefNotConfirmed(ref_rid)
        rec = self._pending(rid)
        claims = [self._claim(rec.root, e, route, mids[0]), self._claim(ref.root, e, route_prev, mids[1])]
        g = PathGame(self._next_id(), "integrity2", rid, challenger, defender, DEFENDER,
                     self.height + self.config.move_deadline, element=e, claims=claims, ref_rid=ref_rid)
        self._open_game(g)
        self.log("integrity2_open", gid=g.gid, rid=rid, ref=ref_rid, challenger=challenger,
                 defender=defender, element=e.digest, routes=[route, route_prev])
        return g.gid

    @staticmethod
    def _claim(root: bytes, e: Transaction, route, mid: bytes | None) -> PathClaim:
        route = tuple(route)
        if any(b not in (0, 1) for b in route):
            raise BadMove("route bits must be 0 or 1")
        n = len(route)
        hashes = {0: leaf_hash(e), n: root} if n else {0: leaf_hash(e)}
        if n >= 2:
            if mid is None:
                raise BadMove("the middle hash is required to open")
            hashes[midpoint(0, n)] = mid
        return PathClaim(root, route, hashes)

    def _activate(self, g: PathGame, index: int) -> None:
        g.active = index
        c = g.claims[index]
        if c.length == 0:
            self.log("path_trivial", gid=g.gid)
            self._resolve(g, CHALLENGER if c.hashes[0] == c.root else DEFENDER)
        elif c.length == 1:
            self._set_turn(g, CHALLENGER)
        else:
            self._set_turn(g, DEFENDER)

    def path_bisect_move(self, player: str, gid: int, move) -> str:
        g = self._game(gid, player, PathGame)
        g.moves += 1
        if g.turn == DEFENDER:
            self._charge_defender(g)
            if g.active is None:
                if not isinstance(move, ChoosePath) or move.index not in range(len(g.claims)):
                    raise BadMove("defender must pick a path first")
                self.log("choose_path", gid=gid, index=move.index)
                self._activate(g, move.index)
                return g.status
            if not isinstance(move, Select):
                raise BadMove("defender must select a half")
            c = g.claims[g.active]
            m = midpoint(c.lo, c.hi)
            c.lo, c.hi = (m, c.hi) if move.upper else (c.lo, m)
            g.selections += 1
            self.log("select", gid=gid, upper=move.upper, lo=c.lo, hi=c.hi)
            self._set_turn(g, CHALLENGER)
            return g.status
        c = g.claims[g.active]
        if c.hi - c.lo >= 2:
            if not isinstance(move, Mid):
                raise BadMove("challenger must post the middle hash")
            c.hashes[midpoint(c.lo, c.hi)] = move.hash
            self.log("mid", gid=gid, index=midpoint(c.lo, c.hi), hash=move.hash)
            self._set_turn(g, DEFENDER)
            return g.status
        if not isinstance(move, Witness):
            raise BadMove("challenger must post the sibling witness")
        hc, hp = c.hashes[c.lo], c.hashes[c.hi]
        ok = (node_hash(hc, move.hash) if c.side(c.lo) == 0 else node_hash(move.hash, hc)) == hp
        self.log("witness", gid=gid, index=c.lo, ok=ok)
        self._resolve(g, CHALLENGER if ok else DEFENDER)
        return g.status

    # payments

    def htlc_deploy(self, owner: str, beneficiary: str, y: bytes, deadline: int, amount: int) -> int:
        cid = self._next_id()
        self.ledger.lock(owner, f"htlc:{cid}", amount)
        self.htlcs[cid] = Htlc(cid, owner, beneficiary, y, deadline)
        self.log("htlc_deploy", cid=cid, owner=owner, beneficiary=beneficiary, secret=y,
                 deadline=deadline, amount=amount)
        return cid

    def htlc_claim(self, caller: str, cid: int, k: bytes) -> int:
        h = self.htlcs[cid]
        if caller != h.beneficiary:
            raise NotBeneficiary(caller)
        if sha256(k) != h.secret:
            raise WrongPreimage(cid)
        amount = self.ledger.release(f"htlc:{cid}", h.beneficiary)
        h.revealed = k
        h.claimed = True
        self.log("htlc_claim", cid=cid, k=k, amount=amount)
        return amount

    def htlc_withdraw(self, caller: str, cid: int) -> int:
        h = self.htlcs[cid]
        if caller != h.owner:
            raise NotOwner(caller)
        if not self.height > h.deadline:
            raise DeadlineNotPassed(cid)
        amount = self.ledger.release(f"htlc:{cid}", h.owner)
        h.withdrawn = True
        self.log("htlc_withdraw", cid=cid, amount=amount)
        return amount

    def post_bond(self, acct: str, amount: int) -> None:
        self.ledger.lock(acct, f"bond:{acct}", amount)
        self.log("bond", account=acct, amount=amount)

    def accuse_non_reveal(self, client: str, server: int, y: bytes, sig: bytes, cid: int) -> int:
        h = self.htlcs[cid]
        if not self.height > h.deadline:
            raise DeadlineNotPassed(cid)
        if h.claimed or h.accused:
            raise AccusationRejected(f"contract {cid} was claimed or already accused")
        if h.owner != client or h.beneficiary != server_account(server) or h.secret != y:
            raise AccusationRejected("evidence does not match the contract")
        pk = self.pks.get(server)
        if pk is None or not self.scheme.verify(pk, commit_message(y), sig):
            raise SignatureInvalid(server)
        h.accused = True
        key = f"bond:{server_account(server)}"
        paid = slash(self.ledger, key, client, int(self.cost.rho * self.ledger.held(key)))
        self.log("accuse", cid=cid, server=server, client=client, paid=paid)
        return paid.get(client, 0)


class _LedgerTap(list):
    """Mirrors ledger burn/mint events into the L1 event log."""

    def __init__(self, l1: L1State, existing):
        super().__init__(existing)
        self._l1 = l1

    def append(self, item):
        super().append(item)
        self._l1.log("ledger_" + item["kind"], **{k: v for k, v in item.items() if k != "kind"})
