"""Byzantine-tolerant grow-only set with epoch barriers.

Servers gossip added elements to each other directly. Epoch barriers are
decided by a set-consensus service that plays the role of the black-box
set-consensus protocol: it collects proposals and, once it holds ``N - f`` of
them, decides the union of those proposals for every server. Servers install
decisions strictly in epoch order, dropping elements that are invalid or
already in an earlier epoch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .core import ArrangerError, ElementKind, SetElement, tag_message, validate_transaction
from .netsim import Process, Simulator

CONSENSUS = "consensus"


class InvalidElement(ArrangerError):
    pass


def server_pid(i: int) -> str:
    return f"server:{i}"


@dataclass(frozen=True)
class ElementMsg:
    element: SetElement


@dataclass(frozen=True)
class ProposeMsg:
    epoch: int
    elements: frozenset


@dataclass(frozen=True)
class StartMsg:
    epoch: int


@dataclass(frozen=True)
class DecideMsg:
    epoch: int
    elements: frozenset


class ElementValidator:
    """Shared validity predicate: signed transactions and signed epoch hashes."""

    def __init__(self, scheme, server_pks: Mapping[int, bytes]):
        self.scheme = scheme
        self.server_pks = dict(server_pks)

    def __call__(self, e: SetElement) -> bool:
        if e.kind == ElementKind.TX:
            return validate_transaction(e.body)
        sig = e.body
        pk = self.server_pks.get(sig.signer)
        if pk is None or len(sig.root) != 32:
            return False
        return self.scheme.verify(pk, tag_message(sig.epoch, sig.root), sig.signature)


@dataclass
class SetchainConfig:
    n: int
    f: int
    epoch_period: int = 100
    pending_threshold: int = 64


class SetchainServer(Process):
    def __init__(self, index: int, config: SetchainConfig, validator: Callable[[SetElement], bool]):
        self.index = index
        self.pid = server_pid(index)
        self.config = config
        self.validate = validator
        self.theset: set[SetElement] = set()
        self.history: dict[int, frozenset] = {}
        self.epoch = 0
        self.pending: set[SetElement] = set()
        self._in_history: set[SetElement] = set()
        self._proposed: set[int] = set()
        self._started: set[int] = set()
        self._decisions: dict[int, frozenset] = {}
        self._timer_armed = False
        self.sim: Simulator | None = None

    def peers(self) -> list[str]:
        return [server_pid(i) for i in range(self.config.n) if i != self.index]

    # client API

    def add(self, element: SetElement) -> bool:
        if not self.validate(element):
            raise InvalidElement(element.digest.hex()[:12])
        if element in self.theset:
            return True
        self._insert(element)
        self.sim.log("add", server=self.index, element=element.digest[:8],
                     etype=element.kind.name)
        self.sim.broadcast(self.pid, self.peers(), ElementMsg(element))
        return True

    def get(self) -> tuple[frozenset, dict[int, frozenset], int]:
        return frozenset(self.theset), dict(self.history), self.epoch

    # internals

    def _insert(self, element: SetElement) -> None:
        self.theset.add(element)
        if element not in self._in_history:
            self.pending.add(element)
        self.on_added(element)
        if len(self.pending) >= self.config.pending_threshold and self._has_pending_tx():
            self._propose_next()
        else:
            self._arm_timer()

    def _arm_timer(self) -> None:
        if self._timer_armed or not self._has_pending_tx():
            return
        self._timer_armed = True
        self.sim.set_timer(self.pid, self.config.epoch_period, "epoch")

    def on_timer(self, sim, tag):
        if tag == "epoch":
            self._timer_armed = False
            if self._has_pending_tx():
                self._propose_next()

    def _has_pending_tx(self) -> bool:
        # signatures over an older epoch also need a barrier, or they would stay pending forever
        return any(e.kind == ElementKind.TX or e.body.epoch < self.epoch for e in self.pending)

    def _propose_next(self) -> None:
        target = self.epoch + 1
        if target in self._proposed:
            return
        self._proposed.add(target)
        self.sim.send(self.pid, CONSENSUS, ProposeMsg(target, frozenset(self.pending)))

    def on_message(self, sim, sender, msg):
        if isinstance(msg, ElementMsg):
            e = msg.element
            if e not in self.theset and self.validate(e):
                self._insert(e)
        elif isinstance(msg, StartMsg):
            self._started.add(msg.epoch)
            if msg.epoch == self.epoch + 1:
                self._propose_next()
        elif isinstance(msg, DecideMsg):
            self._decisions.setdefault(msg.epoch, msg.elements)
            while self.epoch + 1 in self._decisions:
                self._install(self.epoch + 1, self._decisions.pop(self.epoch + 1))

    def _install(self, epoch: int, elements: Iterable[SetElement]) -> None:
        content = frozenset(e for e in elements if e not in self._in_history and self.validate(e))
        self.history[epoch] = content
        self.epoch = epoch
        self._in_history |= content
        self.theset |= content
        self.pending -= content
        self.sim.log("install", server=self.index, epoch=epoch, size=len(content))
        self.on_newepoch(epoch, content)
        for e in sorted(content, key=lambda x: x.digest):
            self.on_added(e)
        if epoch + 1 in self._started:
            self._propose_next()
        self._arm_timer()

    # hooks for the arranger layer

    def on_added(self, element: SetElement) -> None:
        pass

    def on_newepoch(self, epoch: int, elements: frozenset) -> None:
        pass


class ConsensusService(Process):
    """Set consensus for one epoch at a time.

    ``override`` replaces the decision step (used by adversary model #2): it
    receives the honest decision and returns the set each server is told.
    """

    pid = CONSENSUS

    def __init__(self, n: int, f: int,
                 override: Callable[[int, frozenset], Mapping[int, frozenset]] | None = None):
        self.n = n
        self.f = f
        self.override = override
        self.decided = 0
        self._proposals: dict[int, list[tuple[int, frozenset]]] = {}

    def on_message(self, sim, sender, msg):
        if not isinstance(msg, ProposeMsg) or not sender.startswith("server:"):
            return
        who = int(sender.split(":")[1])
        got = self._proposals.setdefault(msg.epoch, [])
        if any(w == who for w, _ in got):
            return
        got.append((who, msg.elements))
        self._advance(sim)

    def _advance(self, sim: Simulator) -> None:
        while True:
            epoch = self.decided + 1
            got = self._proposals.get(epoch, [])
            if not got:
                return
            if len(got) == 1:
                sim.broadcast(self.pid, [server_pid(i) for i in range(self.n)], StartMsg(epoch))
            if len(got) < self.n - self.f:
                return
            chosen = got[: self.n - self.f]
            decision = frozenset().union(*(els for _, els in chosen))
            self.decided = epoch
            sim.log("decide", epoch=epoch, proposers=[w for w, _ in chosen], size=len(decision))
            per_server = self.override(epoch, decision) if self.override else None
            for i in range(self.n):
                content = per_server.get(i, decision) if per_server else decision
                sim.send(self.pid, server_pid(i), DecideMsg(epoch, content))
            # further proposals for this epoch are ignored
            self._proposals.pop(epoch, None)
