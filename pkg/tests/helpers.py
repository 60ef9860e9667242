"""Shared builders for the grid tests and the acceptance suite."""
from __future__ import annotations

import random

from l2arranger.harness.scenario import Scenario
from l2arranger.incentives import RELATIONS

BEHAVIOURS = [["silent"], ["equivocate"], ["inject_invalid"], ["wrong_hash_sigs"], ["skip_turns"],
              ["repost_legal"], ["post_undersigned"]]
SETCHAIN_PROPERTIES = ("get_global", "get_after_add", "unique_epoch", "consistent_gets", "valid_get")

# one change per cost relation, each breaking only that relation
MUTATIONS = {
    RELATIONS[0]: {"cr_data": 9_999},
    RELATIONS[1]: {"sc_translate": 5},
    RELATIONS[2]: {"sc_validity": 800},
    RELATIONS[3]: {"sc_signature": 1},
    RELATIONS[4]: {"cr_data": 100_000},
    RELATIONS[5]: {"cr_signature": 100_000},
    RELATIONS[6]: {"sr_translate": 50},
    RELATIONS[7]: {"cc_translate": 101},
}

ARRANGER_PROPERTIES = ("unique_batch", "integrity1", "integrity2", "termination", "availability", "batch_epoch")


def grid_scenario(n: int, seed: int, l1: bool = True) -> Scenario:
    f = (n - 1) // 3
    r = random.Random(seed * 31 + n)
    byz = {i: r.choice(BEHAVIOURS) for i in r.sample(range(n), r.randint(0, f))}
    return Scenario(name=f"grid{n}", n=n, f=f, seed=seed, l1=l1, txs=r.randint(4, 16),
                    invalid_txs=r.randint(0, 2), duplicate_adds=r.randint(0, 2), gst=r.choice([0, 50, 200]),
                    byzantine=byz, tx_interval=r.randint(3, 15), epoch_period=r.choice([40, 100]),
                    delta=r.choice([3, 5, 9]))
