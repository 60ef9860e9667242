"""Scenario fixtures: a JSON document describing one reproducible run."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..core import ArrangerError
from ..incentives import CostModel, RewardParams


class FixtureInvalid(ArrangerError):
    pass


@dataclass
class Scenario:
    name: str = "scenario"
    mode: str = "decentralized"  # or "semi"
    n: int = 4
    f: int = 1
    seed: int = 0
    # network and setchain
    delta: int = 5
    gst: int = 0
    epoch_period: int = 100
    pending_threshold: int = 64
    # L1 coupling
    l1: bool = True
    block_ticks: int = 10
    turn_blocks: int = 2
    confirm_delay: int = 20
    move_deadline: int = 2
    htlc_window: int = 4
    # workload
    txs: int = 8
    invalid_txs: int = 0
    tx_interval: int = 7
    duplicate_adds: int = 0
    # faults
    byzantine: dict = field(default_factory=dict)
    providers: dict = field(default_factory=dict)
    adversary: dict | None = None
    # players
    agent: bool = True
    agent_budget: int = 1_000_000
    offchain: bool = True
    stf: bool = True
    scheme: str = "ed25519"
    cost: dict = field(default_factory=dict)
    rewards: dict = field(default_factory=dict)
    max_ticks: int = 200_000
    expect: dict = field(default_factory=dict)

    def cost_model(self) -> CostModel:
        return CostModel.from_dict(self.cost)

    def reward_params(self) -> RewardParams:
        return RewardParams(**self.rewards)

    def faulty(self) -> set[int]:
        out = {int(i) for i in self.byzantine}
        if self.adversary:
            out |= set(self.adversary["controlled"])
        return out

    def validate(self) -> Scenario:
        if self.mode not in ("decentralized", "semi"):
            raise FixtureInvalid(f"unknown mode {self.mode!r}")
        if self.n < 1 or self.f < 0:
            raise FixtureInvalid("n must be positive and f non-negative")
        if self.mode == "decentralized" and not 3 * self.f < self.n:
            raise FixtureInvalid(f"f={self.f} violates f < N/3 for N={self.n}")
        if self.mode == "semi" and not 2 * self.f < self.n:
            raise FixtureInvalid(f"f={self.f} violates f < n/2 for n={self.n}")
        if any(not 0 <= int(i) < self.n for i in self.faulty()):
            raise FixtureInvalid("faulty server index out of range")
        # more than f faults is only meaningful when declared as an adversary or an expected stall
        if len({int(i) for i in self.byzantine}) > self.f and not self.expect.get("stall"):
            raise FixtureInvalid("more than f Byzantine servers without an adversary model")
        if self.adversary and self.mode != "decentralized":
            raise FixtureInvalid("adversary models apply to the decentralized arranger")
        try:
            self.cost_model()
            self.reward_params()
        except (TypeError, ValueError) as exc:
            raise FixtureInvalid(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> Scenario:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise FixtureInvalid(f"unknown fixture fields {sorted(unknown)}")
        sc = cls(**data)
        sc.byzantine = {int(k): list(v) for k, v in sc.byzantine.items()}
        sc.providers = {int(k): v for k, v in sc.providers.items()}
        return sc.validate()


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FixtureInvalid(f"{path}: {exc}") from exc
    return Scenario.from_dict(data)
