"""Deterministic discrete-event scheduler for a partially synchronous network.

Channels between processes are authenticated and reliable: a message from a
correct process is delivered exactly once after a delay drawn from the
seeded RNG. Before the global stabilization tick (GST) delays are drawn from
``[1, pre_gst_factor * delta]``; afterwards from ``[1, delta]``. A message
whose claimed sender differs from its real sender is dropped by the
receiver, which is how forged messages from Byzantine processes die.
"""
from __future__ import annotations

import heapq
import json
import random
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

from .core import ArrangerError


class MaxTicksExceeded(ArrangerError):
    def __init__(self, trace: Trace):
        super().__init__(f"simulation did not quiesce before tick {trace.end_tick}")
        self.trace = trace


@dataclass
class NetworkConfig:
    delta: int = 5
    gst: int = 0
    seed: int = 0
    pre_gst_factor: int = 10
    trace_messages: bool = True


@dataclass(order=True)
class Event:
    time: int
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False)
    sender: str | None = field(compare=False, default=None)
    claimed: str | None = field(compare=False, default=None)
    timer: bool = field(compare=False, default=False)


class Process:
    """Base class for anything the scheduler can deliver to."""

    pid: str = ""

    def on_message(self, sim: Simulator, sender: str, msg: Any) -> None:
        pass

    def on_timer(self, sim: Simulator, tag: Any) -> None:
        pass


def _jsonable(value: Any) -> Any:
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted(_jsonable(v) for v in value)
    return value


@dataclass
class Trace:
    header: dict
    records: list[dict] = field(default_factory=list)
    end_tick: int = 0
    exceeded: bool = False

    def dumps(self) -> str:
        lines = [json.dumps({"kind": "header", **self.header}, sort_keys=True)]
        lines.extend(json.dumps(r, sort_keys=True) for r in self.records)
        return "\n".join(lines) + "\n"

    def of_kind(self, *kinds: str) -> list[dict]:
        return [r for r in self.records if r["kind"] in kinds]


class Simulator:
    def __init__(self, config: NetworkConfig | None = None, header: dict | None = None):
        self.config = config or NetworkConfig()
        self.rng = random.Random(self.config.seed)
        self.now = 0
        self._queue: list[Event] = []
        self._seq = 0
        self.processes: dict[str, Process] = {}
        self.byzantine: set[str] = set()
        self.crashed: set[str] = set()
        self.trace = Trace({"seed": self.config.seed, "network": asdict(self.config), **(header or {})})
        self.sent_at: dict[int, int] = {}

    def register(self, proc: Process, byzantine: bool = False) -> Process:
        if proc.pid in self.processes:
            raise ValueError(f"duplicate process id {proc.pid}")
        self.processes[proc.pid] = proc
        if byzantine:
            self.byzantine.add(proc.pid)
        return proc

    def is_correct(self, pid: str) -> bool:
        return pid not in self.byzantine and pid not in self.crashed

    def log(self, kind: str, **payload) -> None:
        self.trace.records.append({"t": self.now, "kind": kind, **_jsonable(payload)})

    def draw_delay(self) -> int:
        bound = self.config.delta
        if self.now < self.config.gst:
            bound *= self.config.pre_gst_factor
        return self.rng.randint(1, bound)

    def _push(self, ev: Event) -> None:
        heapq.heappush(self._queue, ev)
        self._seq += 1

    def send(self, src: str, dst: str, msg: Any, claimed_sender: str | None = None) -> int:
        if dst not in self.processes:
            raise KeyError(f"unknown destination {dst}")
        when = self.now + self.draw_delay()
        ev = Event(when, self._seq, dst, msg, sender=src, claimed=claimed_sender or src)
        self.sent_at[ev.seq] = self.now
        self._push(ev)
        return when

    def broadcast(self, src: str, dsts, msg: Any) -> None:
        for d in dsts:
            self.send(src, d, msg)

    def set_timer(self, pid: str, delay: int, tag: Any = None) -> None:
        self._push(Event(self.now + max(delay, 0), self._seq, pid, tag, timer=True))

    def pending_events(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        if not self._queue:
            return False
        ev = heapq.heappop(self._queue)
        self.now = ev.time
        proc = self.processes[ev.target]
        if ev.target in self.crashed:
            return True
        if ev.timer:
            proc.on_timer(self, ev.payload)
            return True
        sent = self.sent_at.pop(ev.seq)
        if ev.claimed != ev.sender and self.is_correct(ev.target):
            self.log("drop_forged", src=ev.sender, claimed=ev.claimed, dst=ev.target,
                     msg=type(ev.payload).__name__)
            return True
        if self.config.trace_messages:
            self.log("deliver", src=ev.sender, dst=ev.target, sent=sent,
                     msg=type(ev.payload).__name__)
        proc.on_message(self, ev.claimed, ev.payload)
        return True

    def run_until_quiescent(self, max_ticks: int = 1_000_000,
                            stop: Callable[[Simulator], bool] | None = None) -> Trace:
        while self._queue:
            if self._queue[0].time > max_ticks:
                self.trace.end_tick = self.now
                self.trace.exceeded = True
                raise MaxTicksExceeded(self.trace)
            self.step()
            if stop is not None and stop(self):
                break
        self.trace.end_tick = self.now
        return self.trace


def run_until_quiescent(sim: Simulator, max_ticks: int = 1_000_000) -> Trace:
    return sim.run_until_quiescent(max_ticks)
