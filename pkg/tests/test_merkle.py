from __future__ import annotations

import hashlib

import pytest
from hypothesis import given, strategies as st

from l2arranger.core import Batch, Transaction
from l2arranger.merkle import (EMPTY_ROOT, LeafHasNoChildren, MerkleTree, NodeRef, PositionOutOfRange,
                               SegmentTooShort, children, leaf_hash, leaf_path, merkle_root, midpoint,
                               node_hash, verify_parent)


def H(b: bytes) -> bytes:
    return hashlib.sha256(b).digest()


def oracle_root(leaves: list[bytes]) -> bytes:
    """Recursive definition: split at the largest power of two below n."""
    if not leaves:
        return H(b"\x00")
    if len(leaves) == 1:
        return H(b"\x00" + leaves[0])
    k = 1
    while 2 * k < len(leaves):
        k *= 2
    return H(b"\x01" + oracle_root(leaves[:k]) + oracle_root(leaves[k:]))


# published Certificate Transparency tree-head vectors for the first n test leaves
CT_LEAVES = [b"", b"\x00", b"\x10", b"\x20\x21", b"\x30\x31", b"\x40\x41\x42\x43", bytes(range(0x50, 0x58)),
             bytes(range(0x60, 0x70))]
CT_ROOTS = {
    1: "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d",
    2: "fac54203e7cc696cf0dfcb42c92a1d9dbaf70ad9e621f4bd8d98662f00e3c125",
    3: "aeb6bcfe274b70a14fb067a5e5578264db0fa9b51af5e0ba159158f329e06e77",
    4: "d37ee418976dd95753c1c73862b9398fa2a2cf9b4ff0fdfe8b30cd95209614b7",
    5: "4e3bbb1f7b478dcfe71fb631631519a3bca12c9aefca1612bfce4c13a86264d4",
    6: "76e67dadbcdf1e10e1b74ddc608abd2f98dfb16fbce75277b5232a127f2087ef",
    7: "ddb89be403809e325750d3d263cd78929c2942b7942a34b77e122c9594a74c8c",
    8: "5dc9da79a70659a9ad559cb701ded9a2ab9d823aad2f4960cfe370eff4604328",
}

TXS = [Transaction(b"p%d" % i, bytes([i]) * 32, bytes([255 - i]) * 64) for i in range(7)]
TX_ROOTS = {
    0: "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d",
    1: "51e5dd352e1dacf8922aa451afa08b9abc1083572927f1c4e93ab5fec8e9ee81",
    2: "3a4c4ee7d573016b9e769bdb1ab3220524107d83930537f2e7a9bf5b92284242",
    3: "5979fcc242aa6d7d9a61747fef0ac5dd8e042c7040df59031becf32b5051dce2",
    5: "b7a25acc832e262f65ec4a06cc7b39f74df2ba7973f7774576359b2471c76eaf",
    7: "06d98f0d23d84bdeee7f1213f0abeb5d3eeea43c6f2425ea2def7cec2ca71b00",
}


@pytest.mark.parametrize("n", sorted(CT_ROOTS))
def test_tree_shape_matches_ct_vectors(n):
    tree = MerkleTree([H(b"\x00" + d) for d in CT_LEAVES[:n]])
    assert tree.root.hex() == CT_ROOTS[n]


@pytest.mark.parametrize("n", sorted(TX_ROOTS))
def test_transaction_roots(n):
    assert merkle_root(Batch(1, tuple(TXS[:n]))).hex() == TX_ROOTS[n]


def test_empty_root():
    assert EMPTY_ROOT == H(b"\x00")
    assert merkle_root(Batch(3)) == EMPTY_ROOT


leaf_lists = st.lists(st.binary(min_size=1, max_size=12), min_size=1, max_size=40)


@given(leaf_lists)
def test_matches_recursive_oracle(data):
    assert MerkleTree([H(b"\x00" + d) for d in data]).root == oracle_root(data)


@given(leaf_lists)
def test_node_count_and_parent_relation(data):
    tree = MerkleTree([H(b"\x00" + d) for d in data])
    nodes = tree.all_nodes()
    assert len(nodes) == 2 * len(data) - 1
    for ref in nodes:
        if ref.level == 0:
            with pytest.raises(LeafHasNoChildren):
                tree.child_refs(ref)
        else:
            hl, hr = children(tree, ref)
            assert verify_parent(tree.hash(ref), hl, hr)


@given(leaf_lists)
def test_routes_and_refs_are_inverse(data):
    tree = MerkleTree([H(b"\x00" + d) for d in data])
    for ref in tree.all_nodes():
        assert tree.node_at(tree.route_of(ref)) == tree.canonical(ref)
    assert tree.depth == max(len(tree.route_of(NodeRef(0, i))) for i in range(len(data)))


@given(leaf_lists, st.data())
def test_leaf_path_folds_to_root(data, draw):
    tree = MerkleTree([H(b"\x00" + d) for d in data])
    pos = draw.draw(st.integers(0, len(data) - 1))
    path = leaf_path(tree, pos)
    assert path.fold() == tree.root
    assert tree.node_at(path.route) == NodeRef(0, pos)
    assert len(path) == len(path.route) + 1


def test_leaf_path_bounds():
    tree = MerkleTree.build(TXS[:3])
    with pytest.raises(PositionOutOfRange):
        leaf_path(tree, 3)


def test_leaf_range_covers_subtree():
    tree = MerkleTree.build(TXS[:5])
    assert list(tree.leaf_range(tree.root_ref())) == list(range(5))
    left, right = tree.child_refs(tree.root_ref())
    assert list(tree.leaf_range(left)) == [0, 1, 2, 3]
    assert list(tree.leaf_range(right)) == [4]


def test_domain_separation():
    tx = TXS[0]
    assert leaf_hash(tx) == H(b"\x00" + tx.serialize())
    assert node_hash(b"a" * 32, b"b" * 32) == H(b"\x01" + b"a" * 32 + b"b" * 32)


def test_midpoint():
    assert midpoint(0, 5) == 2
    with pytest.raises(SegmentTooShort):
        midpoint(3, 4)
