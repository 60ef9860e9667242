from __future__ import annotations

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from l2arranger.core import SetElement, Transaction, sign_transaction
from l2arranger.crypto import CLIENT_SCHEME
from l2arranger.harness.checker import run_checks
from l2arranger.harness.world import run_world
from l2arranger.netsim import NetworkConfig, Simulator
from l2arranger.setchain import (ConsensusService, ElementValidator, InvalidElement, SetchainConfig,
                                 SetchainServer)

from helpers import SETCHAIN_PROPERTIES, grid_scenario

KP = CLIENT_SCHEME.keygen(b"setchain-test")


def build(n=4, f=1, seed=0, period=50, threshold=64):
    sim = Simulator(NetworkConfig(seed=seed))
    cfg = SetchainConfig(n, f, period, threshold)
    validator = ElementValidator(CLIENT_SCHEME, {})
    servers = []
    for i in range(n):
        s = SetchainServer(i, cfg, validator)
        s.sim = sim
        sim.register(s)
        servers.append(s)
    sim.register(ConsensusService(n, f))
    return sim, servers


def test_elements_reach_every_server_and_an_epoch():
    sim, servers = build()
    els = [SetElement.tx(sign_transaction(KP, b"tx%d" % i)) for i in range(6)]
    for i, e in enumerate(els):
        servers[i % 4].add(e)
    sim.run_until_quiescent()
    views = [s.get() for s in servers]
    for theset, history, epoch in views:
        assert set(els) <= theset
        assert set(els) <= set().union(*history.values())
        assert sorted(history) == list(range(1, epoch + 1))
    assert all(v[1] == views[0][1] for v in views)


def test_invalid_element_rejected():
    sim, servers = build()
    with pytest.raises(InvalidElement):
        servers[0].add(SetElement.tx(Transaction(b"x", KP.pk, bytes(64))))


def test_threshold_triggers_epoch_early():
    sim, servers = build(period=10**6, threshold=3)
    for i in range(3):
        servers[0].add(SetElement.tx(sign_transaction(KP, b"t%d" % i)))
    sim.run_until_quiescent(stop=lambda s: servers[1].epoch >= 1)
    assert servers[1].epoch >= 1 and sim.now < 1000


def test_re_add_is_idempotent():
    sim, servers = build()
    e = SetElement.tx(sign_transaction(KP, b"once"))
    servers[0].add(e)
    servers[1].add(e)
    sim.run_until_quiescent()
    eps = [ep for ep, els in servers[2].history.items() if e in els]
    assert len(eps) == 1


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.sampled_from([4, 7]), st.integers(0, 10**4))
def test_properties_hold_with_byzantine_servers(n, seed):
    w = run_world(grid_scenario(n, seed, l1=False))
    checks = run_checks(w)
    for name in SETCHAIN_PROPERTIES:
        assert checks[name][0], (name, checks[name][1])
