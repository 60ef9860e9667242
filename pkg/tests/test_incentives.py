from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from helpers import MUTATIONS
from l2arranger.incentives import (FEE_POOL, RELATIONS, CostModel, InsufficientFunds, Ledger, RewardParams,
                                   budget_formula, distribute_rewards, min_budget, slash,
                                   validate_cost_relations)


def test_budget_formula_by_hand():
    assert budget_formula(5, 10, 7, 9) == 19
    assert budget_formula(30, 10, 7, 9) == 30
    assert min_budget(CostModel()) == 1800


def test_default_model_is_sound():
    assert validate_cost_relations(CostModel()) == []


@pytest.mark.parametrize("relation", RELATIONS)
def test_each_single_mutation_is_rejected(relation):
    assert validate_cost_relations(CostModel().with_(**MUTATIONS[relation])) == [relation]


def test_signature_reward_bound_scales_with_stakers():
    cm = CostModel().with_(cr_signature=150_000)
    assert RELATIONS[5] in validate_cost_relations(cm, min_stakers=1)
    assert validate_cost_relations(cm, min_stakers=2) == []


def test_cost_model_from_dict_rejects_unknown():
    with pytest.raises(ValueError):
        CostModel.from_dict({"bogus": 1})
    assert CostModel.from_dict(CostModel().to_dict()) == CostModel()


ops = st.lists(st.tuples(st.sampled_from(["transfer", "lock", "release", "burn", "burn_escrow", "mint"]),
                         st.sampled_from(["a", "b", "c"]), st.sampled_from(["a", "b", "c"]),
                         st.sampled_from(["k1", "k2"]), st.integers(0, 60)), max_size=40)


@given(ops)
def test_ledger_conservation(seq):
    led = Ledger.with_balances({"a": 100, "b": 50, "c": 0})
    for op, x, y, key, amt in seq:
        try:
            if op == "transfer":
                led.transfer(x, y, amt)
            elif op == "lock":
                led.lock(x, key, amt)
            elif op == "release":
                led.release(key, y, amt)
            elif op == "burn":
                led.burn(x, amt)
            elif op == "burn_escrow":
                led.burn_escrow(key)
            else:
                led.mint(x, amt)
        except InsufficientFunds:
            pass
        assert led.conserved()
        assert all(v >= 0 for v in led.balances.values())
        assert all(v >= 0 for v in led.escrow.values())


def test_rewards_by_hand():
    led = Ledger.with_balances({FEE_POOL: 1000})
    arr = [f"server:{i}" for i in range(4)]
    deltas = distribute_rewards(led, RewardParams(), arr, arr[:3], arr[0], 8)
    # k1 = 10 to all; k2 = 5*3 + 8 = 23 to signers; k3 = 20 to the poster
    assert deltas == {"server:0": 53, "server:1": 33, "server:2": 33, "server:3": 10}
    assert led.balance(FEE_POOL) == 1000 - 129 and led.minted == 0


def test_rewards_shortfall_is_minted():
    led = Ledger.with_balances({FEE_POOL: 5})
    distribute_rewards(led, RewardParams(), ["s"], ["s"], "s", 0)
    assert led.minted == 10 + 5 + 20 - 5 and led.conserved()
    assert led.events[-1]["reason"] == "reward shortfall"


def test_slash_caps_reward_and_burns_rest():
    led = Ledger.with_balances({"x": 100})
    led.lock("x", "stake", 100)
    assert slash(led, "stake", "w", 30) == {"burned": 70, "w": 30}
    assert led.balance("w") == 30 and led.burned == 70 and led.conserved()
