"""Token ledger, reward distribution, slashing and the challenge cost model."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable

from .core import ArrangerError

CHALLENGES = ("data", "signature", "validity", "integrity")


class InsufficientFunds(ArrangerError):
    pass


@dataclass
class Ledger:
    """Balances plus named escrow slots; every burn and mint is logged."""

    balances: dict[str, int] = field(default_factory=dict)
    escrow: dict[str, int] = field(default_factory=dict)
    initial: int = 0
    minted: int = 0
    burned: int = 0
    events: list[dict] = field(default_factory=list)

    @classmethod
    def with_balances(cls, balances: dict[str, int]) -> Ledger:
        return cls(dict(balances), {}, sum(balances.values()))

    def balance(self, acct: str) -> int:
        return self.balances.get(acct, 0)

    def held(self, key: str) -> int:
        return self.escrow.get(key, 0)

    def _debit(self, acct: str, amount: int) -> None:
        if amount < 0:
            raise ValueError("negative amount")
        if self.balance(acct) < amount:
            raise InsufficientFunds(f"{acct} holds {self.balance(acct)} < {amount}")
        self.balances[acct] = self.balance(acct) - amount

    def credit(self, acct: str, amount: int) -> None:
        self.balances[acct] = self.balance(acct) + amount

    def transfer(self, src: str, dst: str, amount: int) -> None:
        self._debit(src, amount)
        self.credit(dst, amount)

    def lock(self, acct: str, key: str, amount: int) -> None:
        self._debit(acct, amount)
        self.escrow[key] = self.held(key) + amount

    def release(self, key: str, dst: str, amount: int | None = None) -> int:
        held = self.held(key)
        amount = held if amount is None else min(amount, held)
        self.escrow[key] = held - amount
        if not self.escrow[key]:
            del self.escrow[key]
        self.credit(dst, amount)
        return amount

    def burn_escrow(self, key: str) -> int:
        amount = self.escrow.pop(key, 0)
        if amount:
            self.burned += amount
            self.events.append({"kind": "burn", "source": key, "amount": amount})
        return amount

    def burn(self, acct: str, amount: int) -> None:
        self._debit(acct, amount)
        self.burned += amount
        if amount:
            self.events.append({"kind": "burn", "source": acct, "amount": amount})

    def mint(self, acct: str, amount: int, reason: str = "") -> None:
        self.credit(acct, amount)
        self.minted += amount
        self.events.append({"kind": "mint", "to": acct, "amount": amount, "reason": reason})

    def total(self) -> int:
        return sum(self.balances.values()) + sum(self.escrow.values())

    def conserved(self) -> bool:
        return self.total() == self.initial + self.minted - self.burned


@dataclass(frozen=True)
class RewardParams:
    k1: int = 10
    k3: int = 20
    g0: int = 5
    g1: int = 1
    fee_per_tx: int = 2

    def g(self, sigma: int, n_txs: int) -> int:
        return self.g0 * sigma + self.g1 * n_txs


@dataclass(frozen=True)
class CostModel:
    s: int = 100_000
    cc_data: int = 1000
    cr_data: int = 50_000
    sc_data: int = 500
    cc_signature: int = 1500
    cr_signature: int = 50_000
    sc_signature: int = 0
    cc_validity: int = 800
    cr_validity: int = 50_000
    sc_validity: int = 400
    cc_integrity: int = 800
    cr_integrity: int = 50_000
    sc_integrity: int = 400
    cc_translate: int = 50
    sr_translate: int = 40
    sc_translate: int = 4
    margin: int = 10
    rho: float = 0.5

    def cc(self, x: str) -> int:
        return getattr(self, f"cc_{x}")

    def cr(self, x: str) -> int:
        return getattr(self, f"cr_{x}")

    def sc(self, x: str) -> int:
        return getattr(self, f"sc_{x}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> CostModel:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown cost model fields {sorted(unknown)}")
        return cls(**data)

    def with_(self, **changes) -> CostModel:
        return replace(self, **changes)


RELATIONS = (
    "CC_x << CR_x",
    "SC_translate << SR_translate",
    "CC_x > SC_x",
    "SC_signature = 0",
    "CR_x < s",
    "CR_signature < sum of stakes",
    "CC_translate > SR_translate",
    "CC_translate << CC_data",
)


def validate_cost_relations(cm: CostModel, min_stakers: int = 1) -> list[str]:
    """Return the violated relations (empty list means the model is sound).

    ``a << b`` is read as ``a * margin <= b``. The signature reward is bounded
    by the stake mass of the smallest possible staker set.
    """
    m = cm.margin
    bad = []
    if any(cm.cc(x) * m > cm.cr(x) for x in CHALLENGES):
        bad.append(RELATIONS[0])
    if cm.sc_translate * m > cm.sr_translate:
        bad.append(RELATIONS[1])
    if any(cm.cc(x) <= cm.sc(x) for x in CHALLENGES):
        bad.append(RELATIONS[2])
    if cm.sc_signature != 0:
        bad.append(RELATIONS[3])
    if any(cm.cr(x) >= cm.s for x in ("data", "validity", "integrity")):
        bad.append(RELATIONS[4])
    if cm.cr_signature >= min_stakers * cm.s:
        bad.append(RELATIONS[5])
    if cm.cc_translate <= cm.sr_translate:
        bad.append(RELATIONS[6])
    if cm.cc_translate * m > cm.cc_data:
        bad.append(RELATIONS[7])
    return bad


def budget_formula(cc_signature: int, cc_data: int, cc_validity: int, cc_integrity: int) -> int:
    return max(cc_signature, cc_data + max(cc_validity, cc_integrity))


def min_budget(cm: CostModel) -> int:
    """Smallest budget that lets one honest agent discard any illegal tag."""
    return budget_formula(cm.cc_signature, cm.cc_data, cm.cc_validity, cm.cc_integrity)


FEE_POOL = "fees"


def distribute_rewards(ledger: Ledger, params: RewardParams, arrangers: Iterable[str],
                       signers: Iterable[str], poster: str, n_txs: int) -> dict[str, int]:
    """Pay k1 to every arranger, k2 = g(sigma, n) to each signer, k3 to the poster.

    Payments come out of the fee pool; any shortfall is minted and logged.
    """
    signers = sorted(set(signers))
    k2 = params.g(len(signers), n_txs)
    deltas: dict[str, int] = {}
    for a in arrangers:
        deltas[a] = deltas.get(a, 0) + params.k1
    for s in signers:
        deltas[s] = deltas.get(s, 0) + k2
    deltas[poster] = deltas.get(poster, 0) + params.k3
    owed = sum(deltas.values())
    short = owed - ledger.balance(FEE_POOL)
    if short > 0:
        ledger.mint(FEE_POOL, short, "reward shortfall")
    for acct in sorted(deltas):
        ledger.transfer(FEE_POOL, acct, deltas[acct])
    return deltas


def slash(ledger: Ledger, escrow_key: str, winner: str | None, reward_cap: int) -> dict[str, int]:
    """Remove an escrowed stake; the winner gets at most ``reward_cap``, the rest burns."""
    paid = ledger.release(escrow_key, winner, reward_cap) if winner else 0
    burned = ledger.burn_escrow(escrow_key)
    out = {"burned": burned}
    if winner:
        out[winner] = paid
    return out
