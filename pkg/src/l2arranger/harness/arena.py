"""L1-only arena: servers, agents and scripted adversaries take turns per block.

No network is simulated here. Tags are signed directly with the server keys,
which makes the arena the cheap place to play the challenge games exhaustively.
"""
from __future__ import annotations

import random
from typing import Callable, Iterable, Sequence

from ..agents import Attestor, Defender, DefenderScript, HonestAgent, TranslationProvider, coalition_sign
from ..arranger import InvalidId
from ..core import Batch, SignedBatchTag, Transaction, canonical_order, sign_transaction
from ..crypto import CLIENT_SCHEME, get_scheme
from ..incentives import CostModel, Ledger, RewardParams
from ..l1sim import L1Config, L1State, server_account
from ..merkle import merkle_root

AGENT = "agent"


def make_txs(count: int, seed: int = 0, size: int = 24) -> list[Transaction]:
    rng = random.Random(seed)
    kp = CLIENT_SCHEME.keygen(b"client:%d" % seed)
    return [sign_transaction(kp, b"%d:" % i + rng.randbytes(size)) for i in range(count)]


class Arena:
    def __init__(self, n: int = 4, f: int = 1, cost: CostModel | None = None, config: L1Config | None = None,
                 rewards: RewardParams | None = None, server_balance: int | None = None,
                 agent_budget: int = 10**6, scheme: str = "ed25519", seed: int = 0):
        self.n, self.f = n, f
        self.scheme = get_scheme(scheme)
        self.keys = {i: self.scheme.keygen(b"server:%d" % i) for i in range(n)}
        self.pks = {i: kp.pk for i, kp in self.keys.items()}
        cost = cost or CostModel()
        bal = server_balance if server_balance is not None else 10 * cost.s
        balances = {server_account(i): bal for i in range(n)}
        balances[AGENT] = agent_budget
        self.ledger = Ledger.with_balances(balances)
        self.l1 = L1State(n, f, self.pks, self.scheme, self.ledger, cost, rewards, config)
        self.rng = random.Random(seed)
        self.attestor = Attestor(b"arena:%d" % seed)
        self.batches: dict[bytes, Batch] = {}
        self.by_key: dict[tuple[int, bytes], Batch] = {}
        self.actors: list = []

    # helpers

    def lookup(self, root: bytes) -> Batch | None:
        return self.batches.get(root)

    def translate(self, batch_id: int, root: bytes) -> Batch:
        b = self.by_key.get((batch_id, root))
        if b is None:
            raise InvalidId(batch_id)
        return b

    def sign(self, batch: Batch, signers: Iterable[int] | None = None) -> SignedBatchTag:
        signers = range(self.f + 1) if signers is None else signers
        return coalition_sign(self.scheme, self.keys, signers, batch.id, merkle_root(batch))

    def post(self, batch: Batch, poster: int = 0, signers: Iterable[int] | None = None,
             tag: SignedBatchTag | None = None) -> int:
        tag = tag or self.sign(batch, signers)
        self.batches[merkle_root(batch)] = batch
        self.by_key[(batch.id, merkle_root(batch))] = batch
        return self.l1.post_tag(server_account(poster), tag, self.l1.cost.s)

    def legal_batch(self, batch_id: int, txs: Sequence[Transaction]) -> Batch:
        return Batch(batch_id, tuple(canonical_order(txs)))

    def defender(self, poster: int = 0, script: DefenderScript | None = None) -> Defender:
        d = Defender(server_account(poster), self.lookup, script)
        self.actors.append(d)
        return d

    def provider(self, index: int, mode: str = "honest", bond: int = 10_000) -> TranslationProvider:
        p = TranslationProvider(index, self.keys[index], self.scheme, self.translate, self.attestor,
                                random.Random(self.rng.random()), mode)
        if bond:
            self.l1.post_bond(server_account(index), bond)
        self.actors.append(p)
        return p

    def agent(self, providers: Sequence[TranslationProvider] = (), known_confirmed=None,
              use_offchain: bool = True) -> HonestAgent:
        a = HonestAgent(AGENT, providers, self.attestor, self.scheme, self.pks, random.Random(1),
                        known_confirmed, use_offchain)
        self.actors.append(a)
        return a

    def confirm_now(self, rid: int) -> None:
        """Advance the clock with no actors until ``rid`` leaves the pending state."""
        while self.l1.records[rid].status == "pending":
            self.l1.advance_block()

    def run(self, max_blocks: int = 400, until: Callable[[L1State], bool] | None = None) -> int:
        for _ in range(max_blocks):
            for a in self.actors:
                a.on_block(self.l1)
            self.l1.advance_block()
            if until is not None and until(self.l1):
                break
            if until is None and not self.l1.busy():
                break
        for a in self.actors:
            if isinstance(a, HonestAgent):
                a.settle(self.l1)
        return self.l1.height
