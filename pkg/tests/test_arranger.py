from __future__ import annotations

import socket
import threading

import pytest
from hypothesis import given, settings, strategies as st

from l2arranger.arranger import (STATUS_INVALID_HASH, STATUS_INVALID_ID, STATUS_OK, DacMember, HashMismatch,
                                 HashStore, InvalidHash, InvalidId, ReusedId, compress, decode_request,
                                 decode_response, decompress, encode_request, encode_response, legal_batch,
                                 read_frame)
from l2arranger.core import Batch, DecodeError, Transaction, sign_transaction
from l2arranger.crypto import CLIENT_SCHEME
from l2arranger.harness.arena import make_txs
from l2arranger.harness.checker import run_checks
from l2arranger.harness.scenario import Scenario
from l2arranger.harness.world import run_world
from l2arranger.merkle import merkle_root

TXS = make_txs(12, seed=5)
tx_st = st.builds(Transaction, st.binary(max_size=60), st.binary(max_size=33), st.binary(max_size=64))


@settings(max_examples=60)
@given(st.lists(tx_st, max_size=20))
def test_compression_roundtrip(txs):
    assert decompress(compress(txs)) == tuple(txs)


def test_decompress_rejects_garbage():
    with pytest.raises(DecodeError):
        decompress(b"definitely not brotli")


def test_compression_is_deterministic():
    assert compress(TXS) == compress(list(TXS))


@given(st.integers(0, 2**64 - 1), st.binary(min_size=32, max_size=32))
def test_request_codec(bid, root):
    frame = encode_request(bid, root)
    body = read_frame(_reader(frame))
    assert decode_request(body) == (bid, root)


@given(st.sampled_from([STATUS_OK, STATUS_INVALID_ID, STATUS_INVALID_HASH]), st.binary(max_size=200))
def test_response_codec(status, payload):
    assert decode_response(read_frame(_reader(encode_response(status, payload)))) == (status, payload)


def _reader(data: bytes):
    pos = [0]

    def recv(n):
        # hand out at most 3 bytes per call to exercise reassembly
        out = data[pos[0]:pos[0] + min(n, 3)]
        pos[0] += len(out)
        return out
    return recv


def test_truncated_frame():
    frame = encode_response(STATUS_OK, b"abcdef")
    with pytest.raises(DecodeError):
        read_frame(_reader(frame[:-2]))
    assert read_frame(_reader(b"")) is None


def test_wire_over_socketpair():
    a, b = socket.socketpair()
    blob = compress(TXS)

    def serve():
        bid, root = decode_request(read_frame(b.recv))
        b.sendall(encode_response(STATUS_OK, blob))
    t = threading.Thread(target=serve)
    t.start()
    a.sendall(encode_request(4, bytes(32)))
    status, payload = decode_response(read_frame(a.recv))
    t.join()
    a.close()
    b.close()
    assert status == STATUS_OK and decompress(payload) == tuple(TXS)


def test_hash_store_errors():
    store = HashStore()
    batch = Batch(1, tuple(TXS[:3]))
    root = store.put(batch)
    assert store.translate(1, root) is batch
    with pytest.raises(InvalidHash):
        store.translate(1, bytes(32))
    with pytest.raises(InvalidId):
        store.translate(2, root)
    # empty batches share a root, so the id must disambiguate
    e1, e2 = Batch(5), Batch(6)
    r1, r2 = store.put(e1), store.put(e2)
    assert r1 == r2 and store.translate(6, r2) is e2


def test_dac_member_checks():
    kp = CLIENT_SCHEME.keygen(b"dac")
    m = DacMember(0, CLIENT_SCHEME, kp)
    batch = Batch(1, tuple(TXS[:2]))
    root = merkle_root(batch)
    m.sign_request(1, root, batch)
    with pytest.raises(ReusedId):
        m.sign_request(1, root, batch)
    with pytest.raises(HashMismatch):
        m.sign_request(2, root, Batch(2, tuple(TXS[:3])))


def test_legal_batch_classes():
    kp = CLIENT_SCHEME.keygen(b"lb")
    good = [sign_transaction(kp, b"g%d" % i) for i in range(3)]
    bad = Transaction(b"x", kp.pk, bytes(64))
    assert legal_batch(Batch(1, tuple(good)), set()) == []
    assert legal_batch(Batch(1, (*good, bad)), set()) == ["B2"]
    assert legal_batch(Batch(1, (*good, good[0])), set()) == ["B3"]
    assert legal_batch(Batch(1, tuple(good)), {good[1]}) == ["B4"]


@pytest.mark.parametrize("n,seed", [(4, 0), (4, 1), (7, 2), (10, 3)])
def test_decentralized_run_is_correct(n, seed):
    w = run_world(Scenario(name="t", n=n, f=(n - 1) // 3, seed=seed, txs=10, invalid_txs=1, duplicate_adds=1))
    failed = {k: v for k, v in run_checks(w).items() if not v[0]}
    assert not failed
    assert len(w.l1.confirmed) >= 1


def test_semi_mode_posts_and_confirms():
    w = run_world(Scenario(name="semi", mode="semi", n=3, f=1, txs=9))
    failed = {k: v for k, v in run_checks(w).items() if not v[0]}
    assert not failed
    assert w.sequencer.posted
