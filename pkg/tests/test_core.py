from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from l2arranger.core import (Batch, BatchTag, DecodeError, DuplicateTransaction, EpochSignature, SetElement,
                             SignedBatchTag, Transaction, bitmap_to_signers, canonical_order, decode_txs,
                             encode_txs, sign_transaction, signers_to_bitmap, tag_message, to_batch,
                             validate_transaction)
from l2arranger.crypto import CLIENT_SCHEME

blobs = st.binary(max_size=80)
txs_st = st.builds(Transaction, blobs, blobs, blobs)


@given(txs_st)
def test_transaction_roundtrip(tx):
    assert Transaction.deserialize(tx.serialize()) == tx


@given(st.integers(0, 2**64 - 1), st.lists(txs_st, max_size=6))
def test_batch_roundtrip(bid, txs):
    b = Batch(bid, tuple(txs))
    assert Batch.deserialize(b.serialize()) == b
    assert decode_txs(encode_txs(txs)) == tuple(txs)


@given(st.sets(st.integers(0, 300), max_size=40))
def test_bitmap_roundtrip(signers):
    assert bitmap_to_signers(signers_to_bitmap(signers)) == tuple(sorted(signers))


@given(st.integers(0, 2**64 - 1), st.binary(min_size=32, max_size=32), st.binary(max_size=96),
       st.sets(st.integers(0, 63), max_size=10))
def test_signed_tag_roundtrip(bid, root, sig, signers):
    t = SignedBatchTag(BatchTag(bid, root), sig, tuple(signers))
    assert SignedBatchTag.deserialize(t.serialize()) == t


def test_element_roundtrip():
    tx = Transaction(b"p", b"a" * 32, b"s" * 64)
    meta = EpochSignature(3, b"r" * 32, 2, b"sig")
    for e in (SetElement.tx(tx), SetElement.meta(meta)):
        assert SetElement.deserialize(e.serialize()) == e


def test_truncated_input_rejected():
    data = Transaction(b"payload", b"a", b"b").serialize()
    with pytest.raises(DecodeError):
        Transaction.deserialize(data[:-1])
    with pytest.raises(DecodeError):
        Transaction.deserialize(data + b"\x00")


@given(st.lists(txs_st, max_size=12, unique_by=lambda t: t.serialize()))
def test_canonical_order_is_permutation_invariant(txs):
    assert canonical_order(txs) == canonical_order(reversed(txs))
    digests = [t.digest for t in canonical_order(txs)]
    assert digests == sorted(digests)


def test_canonical_order_rejects_duplicates():
    tx = Transaction(b"x", b"y", b"z")
    with pytest.raises(DuplicateTransaction):
        canonical_order([tx, tx])


def test_signed_transaction_validity():
    kp = CLIENT_SCHEME.keygen(b"k")
    tx = sign_transaction(kp, b"hello")
    assert validate_transaction(tx)
    assert not validate_transaction(Transaction(b"hellp", tx.author, tx.signature))
    assert not validate_transaction(sign_transaction(kp, b""))


def test_to_batch_drops_metadata():
    kp = CLIENT_SCHEME.keygen(b"k")
    a, b = sign_transaction(kp, b"a"), sign_transaction(kp, b"b")
    meta = SetElement.meta(EpochSignature(1, bytes(32), 0, b""))
    batch = to_batch(7, [SetElement.tx(a), meta, SetElement.tx(b)])
    assert batch.id == 7 and batch.txs == tuple(canonical_order([a, b]))


def test_tag_message_binds_id_and_root():
    root = bytes(32)
    assert tag_message(1, root) != tag_message(2, root)
    assert tag_message(1, root) != tag_message(1, b"\x01" * 32)
