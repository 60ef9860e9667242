from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from l2arranger.netsim import MaxTicksExceeded, NetworkConfig, Process, Simulator


class Echo(Process):
    def __init__(self, pid, peer=None, hops=0):
        self.pid, self.peer, self.hops = pid, peer, hops
        self.got = []

    def on_message(self, sim, sender, msg):
        self.got.append((sim.now, sender, msg))
        if self.peer and msg < self.hops:
            sim.send(self.pid, self.peer, msg + 1)


def ping_pong(seed, gst=0, delta=5, hops=20):
    sim = Simulator(NetworkConfig(delta=delta, gst=gst, seed=seed))
    a, b = Echo("a", "b", hops), Echo("b", "a", hops)
    sim.register(a)
    sim.register(b)
    sim.send("a", "b", 0)
    sim.run_until_quiescent()
    return sim, a, b


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_same_seed_same_trace(seed):
    assert ping_pong(seed)[0].trace.dumps() == ping_pong(seed)[0].trace.dumps()


@settings(max_examples=30)
@given(st.integers(0, 10**6), st.integers(1, 12))
def test_delays_bounded_after_gst(seed, delta):
    sim, _, _ = ping_pong(seed, gst=0, delta=delta)
    for r in sim.trace.of_kind("deliver"):
        assert 1 <= r["t"] - r["sent"] <= delta


def test_pre_gst_delays_can_exceed_delta():
    sim, _, _ = ping_pong(3, gst=10**6, delta=2, hops=60)
    assert max(r["t"] - r["sent"] for r in sim.trace.of_kind("deliver")) > 2


def test_forged_sender_dropped_at_correct_process():
    sim = Simulator(NetworkConfig(seed=1))
    a, b = Echo("a"), Echo("b")
    sim.register(a, byzantine=True)
    sim.register(b)
    sim.send("a", "b", 0, claimed_sender="c")
    sim.run_until_quiescent()
    assert b.got == [] and sim.trace.of_kind("drop_forged")


def test_timers_fire_in_order():
    fired = []

    class T(Process):
        pid = "t"

        def on_timer(self, sim, tag):
            fired.append((sim.now, tag))

    sim = Simulator()
    sim.register(T())
    sim.set_timer("t", 5, "late")
    sim.set_timer("t", 2, "early")
    sim.set_timer("t", 2, "early2")
    sim.run_until_quiescent()
    assert fired == [(2, "early"), (2, "early2"), (5, "late")]


def test_max_ticks():
    class Loop(Process):
        pid = "l"

        def on_timer(self, sim, tag):
            sim.set_timer("l", 10)

    sim = Simulator()
    sim.register(Loop())
    sim.set_timer("l", 1)
    with pytest.raises(MaxTicksExceeded):
        sim.run_until_quiescent(max_ticks=100)
    assert sim.trace.exceeded


def test_duplicate_pid_rejected():
    sim = Simulator()
    sim.register(Echo("a"))
    with pytest.raises(ValueError):
        sim.register(Echo("a"))
