"""Wires a scenario into one discrete-event simulation and runs it."""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..agents import (Adversary, AdversaryConfig, Attestor, Defender, HonestAgent, StfAgent, TranslationProvider)
from ..arranger import (ArrangerBehavior, ArrangerNode, DacMember, InsufficientStakeBalance, Sequencer,
                        SequencerConfig)
from ..core import Transaction
from ..crypto import get_scheme
from ..incentives import FEE_POOL, Ledger
from ..l1sim import L1Config, L1State, server_account
from ..netsim import MaxTicksExceeded, NetworkConfig, Process, Simulator
from ..setchain import ConsensusService, ElementValidator, InvalidElement, SetchainConfig
from .arena import make_txs
from .scenario import Scenario

AGENT = "agent"
STF = "stf"
CLIENTS = "clients"
L1_PID = "l1"


class Client(Process):
    """Submits the workload to servers on a fixed schedule."""

    pid = "client"

    def __init__(self, world: World, plan: list[tuple[int, Transaction, object]], interval: int):
        self.world = world
        self.plan = plan
        self.interval = interval

    def start(self, sim: Simulator) -> None:
        for i in range(len(self.plan)):
            sim.set_timer(self.pid, 1 + i * self.interval, i)

    def on_timer(self, sim, tag):
        _, tx, target = self.plan[tag]
        self.world.submit(tx, target)


class L1Driver(Process):
    pid = L1_PID

    def __init__(self, world: World):
        self.world = world

    def on_timer(self, sim, tag):
        self.world.block()


@dataclass
class World:
    scenario: Scenario
    sim: Simulator
    l1: L1State | None
    scheme: object
    keys: dict
    nodes: list = field(default_factory=list)
    dac: list = field(default_factory=list)
    sequencer: Sequencer | None = None
    consensus: ConsensusService | None = None
    actors: list = field(default_factory=list)
    agent: HonestAgent | None = None
    stf: StfAgent | None = None
    adversary: Adversary | None = None
    providers: list = field(default_factory=list)
    added: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    initial_wealth: dict = field(default_factory=dict)
    exceeded: bool = False
    _ticking: bool = False

    # structure

    def faulty(self) -> set[int]:
        return self.scenario.faulty()

    def correct_nodes(self) -> list[ArrangerNode]:
        return [nd for nd in self.nodes if nd.index not in self.faulty()]

    def lookup(self, root: bytes):
        """Omniscient inverse translation across every party that built batches."""
        for src in [*self.nodes, *self.dac]:
            b = src.lookup(root)
            if b is not None:
                return b
        if self.sequencer is not None:
            b = self.sequencer.lookup(root)
            if b is not None:
                return b
        if self.adversary is not None:
            return self.adversary.lookup(root)
        return None

    def batch_of(self, rec):
        """The batch behind a record, matched on both id and root."""
        for src in [*self.nodes, *self.dac, *([self.sequencer] if self.sequencer else [])]:
            b = src.store.hashes.get((rec.id, rec.root))
            if b is not None:
                return b
        if self.adversary is not None:
            b = self.adversary.lookup(rec.root)
            if b is not None and b.id == rec.id:
                return b
        return None

    # client side

    def submit(self, tx: Transaction, target) -> None:
        try:
            if self.sequencer is not None:
                ok = self.sequencer.add(tx)
                if not ok:
                    raise InvalidElement(tx.short())
            else:
                target.arranger_add(tx)
            self.added.append((target, tx))
            if self.l1 is not None:
                fee = self.l1.rewards.fee_per_tx
                if self.l1.ledger.balance(CLIENTS) >= fee:
                    self.l1.ledger.transfer(CLIENTS, FEE_POOL, fee)
        except InvalidElement:
            self.rejected.append((target, tx))
            self.sim.log("client_rejected", tx=tx.digest[:8])

    # L1 clock

    def _kick(self) -> None:
        if not self._ticking and self.l1 is not None:
            self._ticking = True
            self.sim.set_timer(L1_PID, self.scenario.block_ticks, "block")

    def _needs_block(self) -> bool:
        l1 = self.l1
        if self.sim.pending_events() or l1.busy():
            return True
        if self.sequencer is not None and self.sequencer.has_work(l1):
            return True
        if self.adversary is not None and self.adversary.pending and any(
                self.adversary.base_lookup(s["id"]) for s in self.adversary.pending):
            return True
        return any(nd.has_work(l1) for nd in self.correct_nodes() if not nd.behavior.byzantine)

    def block(self) -> None:
        sc, l1 = self.scenario, self.l1
        h = l1.height
        if self.nodes and h % sc.turn_blocks == 0:
            node = self.nodes[(h // sc.turn_blocks) % sc.n]
            try:
                node.on_myturn(l1)
            except InsufficientStakeBalance:
                self.sim.log("stake_refused", server=node.index)
        for a in self.actors:
            a.on_block(l1)
        l1.advance_block()
        if self._needs_block():
            self.sim.set_timer(L1_PID, sc.block_ticks, "block")
        else:
            self._ticking = False

    def run(self) -> World:
        try:
            self.sim.run_until_quiescent(self.scenario.max_ticks)
        except MaxTicksExceeded:
            self.exceeded = True
        if self.agent is not None:
            self.agent.settle(self.l1)
        return self

    def wealth(self, acct: str) -> int:
        if self.l1 is None:
            return 0
        led = self.l1.ledger
        owned = sum(v for k, v in led.escrow.items() if k == f"bond:{acct}" or k.endswith(f":{acct}")
                    and k.startswith("stake:"))
        return led.balance(acct) + owned


def _behavior(names) -> ArrangerBehavior:
    return ArrangerBehavior.from_names(names)


def build_world(sc: Scenario) -> World:
    scheme = get_scheme(sc.scheme)
    keys = {i: scheme.keygen(b"server:%d:%d" % (sc.seed, i)) for i in range(sc.n)}
    pks = {i: kp.pk for i, kp in keys.items()}
    sim = Simulator(NetworkConfig(delta=sc.delta, gst=sc.gst, seed=sc.seed),
                    header={"scenario": sc.name, "mode": sc.mode, "n": sc.n, "f": sc.f})
    rng = random.Random(sc.seed)
    world = World(sc, sim, None, scheme, keys)

    l1 = None
    if sc.l1:
        cost = sc.cost_model()
        balances = {server_account(i): 20 * cost.s for i in range(sc.n)}
        balances.update({AGENT: sc.agent_budget, STF: 20 * cost.s, "sequencer": 20 * cost.s,
                         CLIENTS: 10**6, FEE_POOL: 0})
        ledger = Ledger.with_balances(balances)

        def sink(rec: dict) -> None:
            sim.trace.records.append({"t": sim.now, "src": "l1", **rec})

        l1 = L1State(sc.n, sc.f, pks, scheme, ledger, cost, sc.reward_params(),
                     L1Config(sc.confirm_delay, sc.move_deadline, sc.htlc_window), sink)
        for i in range(sc.n):
            l1.post_bond(server_account(i), cost.s)
        world.l1 = l1

    adv_cfg = AdversaryConfig.from_dict(sc.adversary) if sc.adversary else None
    override = None
    if sc.mode == "decentralized":
        validator = ElementValidator(scheme, pks)
        cfg = SetchainConfig(sc.n, sc.f, sc.epoch_period, sc.pending_threshold)
        for i in range(sc.n):
            node = ArrangerNode(i, cfg, validator, scheme, keys[i], _behavior(sc.byzantine.get(i, [])),
                                random.Random(rng.random()))
            node.sim = sim
            sim.register(node, byzantine=i in world.faulty())
            world.nodes.append(node)
        if adv_cfg is not None:
            base_node = world.nodes[min(adv_cfg.controlled)]

            def base_lookup(k: int):
                root = base_node.store.by_id.get(k)
                return None if root is None else base_node.store.lookup(root)

            world.adversary = Adversary(adv_cfg, sc.n, sc.f, scheme, keys, base_lookup, random.Random(sc.seed + 7))
            if world.adversary.censored_prefixes:
                override = world.adversary.decide_override
        world.consensus = ConsensusService(sc.n, sc.f, override)
        sim.register(world.consensus)
        targets = [nd for nd in world.nodes if nd.index not in world.faulty()] or world.nodes
        translators = world.nodes
    else:
        world.sequencer = Sequencer(SequencerConfig(sc.n, sc.f, sc.pending_threshold, sc.epoch_period), scheme)
        world.sequencer.sim = sim
        sim.register(world.sequencer)
        silent = {int(i) for i, b in sc.byzantine.items() if "silent" in b}
        for i in range(sc.n):
            m = DacMember(i, scheme, keys[i], silent=i in silent)
            m.sim = sim
            sim.register(m, byzantine=i in world.faulty())
            world.dac.append(m)
        targets = [world.sequencer]
        translators = world.dac

    # workload
    txs = make_txs(sc.txs, sc.seed)
    bad = [Transaction(b"invalid:%d" % i, txs[0].author if txs else b"\x00" * 32, bytes(64))
           for i in range(sc.invalid_txs)]
    workload = txs + bad
    rng.shuffle(workload)
    plan = [(i, tx, targets[i % len(targets)]) for i, tx in enumerate(workload)]
    for j in range(sc.duplicate_adds):
        tx = txs[j % len(txs)]
        plan.append((len(plan), tx, targets[(j + 1) % len(targets)]))
    client = Client(world, plan, sc.tx_interval)
    sim.register(client)

    if l1 is not None:
        sim.register(L1Driver(world))
        attestor = Attestor(b"world:%d" % sc.seed)
        sources = world.nodes or world.dac
        for src in sources:
            mode = sc.providers.get(src.index, "honest" if src.index not in world.faulty() else "refuse")
            p = TranslationProvider(src.index, keys[src.index], scheme, src.translate, attestor,
                                    random.Random(rng.random()), mode)
            world.providers.append(p)
            world.actors.append(p)
        if world.sequencer is not None:
            world.actors.append(world.sequencer)
            world.actors.append(Defender(world.sequencer.account, world.sequencer.lookup))
        for nd in world.nodes:
            if nd.index in (adv_cfg.controlled if adv_cfg else ()) or nd.behavior.silent:
                continue
            world.actors.append(Defender(nd.account, nd.lookup))
        if world.adversary is not None:
            world.actors.append(world.adversary)
        if sc.agent:
            world.agent = HonestAgent(AGENT, world.providers, attestor, scheme, pks, random.Random(sc.seed + 1),
                                      use_offchain=sc.offchain)
            world.actors.append(world.agent)
        if sc.stf:
            world.stf = StfAgent(STF, translators)
            world.actors.append(world.stf)
        for acct in [*(server_account(i) for i in range(sc.n)), STF, AGENT, "sequencer"]:
            world.initial_wealth[acct] = world.wealth(acct)

    client.start(sim)
    world._kick()
    return world


def run_world(sc: Scenario) -> World:
    return build_world(sc).run()
