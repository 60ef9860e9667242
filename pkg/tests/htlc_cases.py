"""The payment contract against an independent model, and the non-reveal accusation matrix."""
from __future__ import annotations

import hashlib
import itertools

from gameplay import COST, KEYS, PKS, SCHEME
from l2arranger.incentives import Ledger
from l2arranger.l1sim import (AccusationRejected, DeadlineNotPassed, L1State, NotBeneficiary, NotOwner,
                              SignatureInvalid, WrongPreimage, commit_message, server_account)


class PaymentModel:
    """Straight transcription of the contract: two guarded transfers of the whole balance."""

    def __init__(self, owner, beneficiary, secret, deadline, balance):
        self.owner, self.beneficiary, self.secret, self.deadline = owner, beneficiary, secret, deadline
        self.balance = balance

    def claim(self, sender, k, now):
        if sender != self.beneficiary:
            return "sender", 0
        if hashlib.sha256(k).digest() != self.secret:
            return "preimage", 0
        amount, self.balance = self.balance, 0
        return "ok", amount

    def withdraw(self, sender, now):
        if sender != self.owner:
            return "sender", 0
        if not now > self.deadline:
            return "deadline", 0
        amount, self.balance = self.balance, 0
        return "ok", amount


OWNER, BENEF, STRANGER = "client", server_account(1), "mallory"
KEY = b"translation key"
SECRET = hashlib.sha256(KEY).digest()
DEADLINE = 5
AMOUNT = 40
FUNDS = 1000
BOND = 10_000
ERRORS = {NotBeneficiary: "sender", NotOwner: "sender", WrongPreimage: "preimage", DeadlineNotPassed: "deadline"}
OPS = ([("claim", who, k) for who in (BENEF, OWNER, STRANGER) for k in (KEY, b"guess")]
       + [("withdraw", who, None) for who in (OWNER, BENEF, STRANGER)])
TIMES = (DEADLINE - 1, DEADLINE, DEADLINE + 1)


def deploy(bond: int = 0):
    ledger = Ledger.with_balances({OWNER: FUNDS, BENEF: bond, STRANGER: 0})
    l1 = L1State(4, 1, PKS, SCHEME, ledger, COST)
    cid = l1.htlc_deploy(OWNER, BENEF, SECRET, DEADLINE, AMOUNT)
    return l1, cid


def apply(l1, cid, op):
    kind, who, k = op
    try:
        amount = l1.htlc_claim(who, cid, k) if kind == "claim" else l1.htlc_withdraw(who, cid)
    except tuple(ERRORS) as exc:
        return ERRORS[type(exc)], 0
    return "ok", amount


def sequences(max_len: int = 3):
    """Every op sequence up to ``max_len`` with non-decreasing times around the deadline."""
    for length in range(1, max_len + 1):
        for ops in itertools.product(OPS, repeat=length):
            for times in itertools.combinations_with_replacement(TIMES, length):
                yield list(zip(ops, times))


def compare(seq) -> list:
    """Plays ``seq`` on the contract and the model; returns the mismatches."""
    l1, cid = deploy()
    model = PaymentModel(OWNER, BENEF, SECRET, DEADLINE, AMOUNT)
    bad = []
    for op, now in seq:
        while l1.height < now:
            l1.advance_block()
        kind, who, k = op
        want = model.claim(who, k, now) if kind == "claim" else model.withdraw(who, now)
        got = apply(l1, cid, op)
        if got != want:
            bad.append((op, now, got, want))
    led = l1.ledger
    if (led.held(f"htlc:{cid}") != model.balance or led.balance(STRANGER) != 0
            or led.balance(OWNER) + led.balance(BENEF) != FUNDS - model.balance or not led.conserved()):
        bad.append(("balances", dict(led.balances), model.balance))
    return bad


PRIOR_AT = {"none": 0, "claim": DEADLINE - 1, "withdraw": DEADLINE + 1, "accused": DEADLINE + 1}
EVIDENCE = ("ok", "client", "server", "secret", "signature")
ACCUSE_CASES = [(prior, when, ev) for prior, when, ev in
                itertools.product(PRIOR_AT, (DEADLINE - 1, DEADLINE, DEADLINE + 1, DEADLINE + 4), EVIDENCE)
                if when >= PRIOR_AT[prior]]


def accusation_should_slash(prior: str, when: int, evidence: str) -> bool:
    return when > DEADLINE and prior in ("none", "withdraw") and evidence == "ok"


def accuse(prior: str, when: int, evidence: str) -> dict:
    """Runs one accusation case; returns what happened to the bond and the client."""
    l1, cid = deploy(BOND)
    l1.post_bond(BENEF, BOND)
    sig = SCHEME.sign(KEYS[1].sk, commit_message(SECRET))
    while l1.height < PRIOR_AT[prior]:
        l1.advance_block()
    if prior == "claim":
        l1.htlc_claim(BENEF, cid, KEY)
    elif prior == "withdraw":
        l1.htlc_withdraw(OWNER, cid)
    elif prior == "accused":
        l1.accuse_non_reveal(OWNER, 1, SECRET, sig, cid)
    while l1.height < when:
        l1.advance_block()
    held = l1.ledger.held(f"bond:{BENEF}")
    args = dict(client=OWNER, server=1, y=SECRET, sig=sig, cid=cid)
    if evidence == "client":
        args["client"] = STRANGER
    elif evidence == "server":
        args["server"] = 2
    elif evidence == "secret":
        args["y"] = hashlib.sha256(b"other").digest()
    elif evidence == "signature":
        args["sig"] = SCHEME.sign(KEYS[2].sk, commit_message(SECRET))
    before = l1.ledger.balance(OWNER)
    try:
        paid = l1.accuse_non_reveal(**args)
        error = None
    except (DeadlineNotPassed, AccusationRejected, SignatureInvalid) as exc:
        paid, error = 0, type(exc).__name__
    return {"slashed": error is None, "paid": paid, "expected_paid": int(COST.rho * held), "error": error,
            "client_gain": l1.ledger.balance(OWNER) - before, "bond_left": l1.ledger.held(f"bond:{BENEF}"),
            "bond_before": held, "conserved": l1.ledger.conserved()}


def accusation_ok(prior: str, when: int, evidence: str) -> bool:
    r = accuse(prior, when, evidence)
    if not r["conserved"]:
        return False
    if accusation_should_slash(prior, when, evidence):
        return r["slashed"] and r["paid"] == r["expected_paid"] == r["client_gain"] and r["bond_left"] == 0
    return not r["slashed"] and r["client_gain"] == 0 and r["bond_left"] == r["bond_before"]
