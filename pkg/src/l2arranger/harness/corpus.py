"""Synthetic transaction corpus and its on-disk format.

A corpus file is a plain concatenation of length-prefixed canonical
transaction serializations. The generator mimics rollup traffic: a small pool
of senders and contracts, a handful of function selectors, and calldata whose
length follows a skewed distribution, so batches compress realistically.
"""
from __future__ import annotations

import random
from pathlib import Path

from ..core import DecodeError, Reader, Transaction, lp, sign_transaction
from ..crypto import CLIENT_SCHEME


class CorpusTooSmall(ValueError):
    pass


def generate(count: int = 40_000, seed: int = 0, senders: int = 256) -> list[Transaction]:
    rng = random.Random(seed)
    keys = [CLIENT_SCHEME.keygen(b"corpus:%d:%d" % (seed, i)) for i in range(senders)]
    contracts = [rng.randbytes(20) for _ in range(64)]
    selectors = [rng.randbytes(4) for _ in range(24)]
    nonces = [0] * senders
    out = []
    for _ in range(count):
        s = min(int(rng.paretovariate(1.2)) - 1, senders - 1)
        s = rng.randrange(senders) if rng.random() < 0.5 else s
        nonces[s] += 1
        words = max(1, min(int(rng.lognormvariate(1.4, 0.9)), 64))
        calldata = b"".join(
            bytes(12) + rng.choice(contracts) if rng.random() < 0.3 else
            rng.randbytes(rng.choice((4, 8, 16, 32))).rjust(32, b"\x00")
            for _ in range(words))
        payload = (nonces[s].to_bytes(8, "big") + rng.choice(contracts) + rng.randrange(10**18).to_bytes(16, "big")
                   + rng.choice(selectors) + calldata)
        out.append(sign_transaction(keys[s], payload))
    return out


def dump(txs, path: str | Path) -> None:
    Path(path).write_bytes(b"".join(lp(tx.serialize()) for tx in txs))


def load(path: str | Path) -> list[Transaction]:
    r = Reader(Path(path).read_bytes())
    out = []
    while r.pos < len(r.data):
        out.append(Transaction.deserialize(r.lp()))
    if not out:
        raise DecodeError(f"{path} holds no transactions")
    return out
