"""Merkle trees over batches and the predicates the L1 challenge games rely on.

Leaves hash as ``SHA256(0x00 || tx)``, internal nodes as
``SHA256(0x01 || left || right)``. When a layer has odd width its last node
is carried up unchanged, so the tree is a proper binary tree with exactly
``n`` leaves and ``n - 1`` internal nodes. An empty batch hashes to
``SHA256(0x00)``, which is never the hash of a leaf or of an internal node.

A node is addressed either by ``NodeRef(level, index)`` in the layered
representation, or by a *route*: the tuple of child choices (0 = left,
1 = right) leading from the root to it. Routes are what the L1 contracts
see, since they know nothing about the batch size.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

from .core import ArrangerError, Batch, Transaction

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_ROOT = hashlib.sha256(LEAF_PREFIX).digest()

Route = tuple[int, ...]


class LeafHasNoChildren(ArrangerError):
    pass


class PositionOutOfRange(ArrangerError):
    pass


class SegmentTooShort(ArrangerError):
    pass


def leaf_hash(tx: Transaction) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + tx.serialize()).digest()


def node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def verify_parent(parent: bytes, left: bytes, right: bytes) -> bool:
    return node_hash(left, right) == parent


@dataclass(frozen=True)
class NodeRef:
    level: int
    index: int


@dataclass(frozen=True)
class RootPath:
    """Leaf-to-root chain of distinct nodes.

    ``sides[i]`` tells whether ``nodes[i]`` is the left (0) or right (1)
    child of ``nodes[i + 1]``, and ``siblings[i]`` is the other child's hash.
    """

    nodes: tuple[NodeRef, ...]
    hashes: tuple[bytes, ...]
    sides: tuple[int, ...]
    siblings: tuple[bytes, ...]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def route(self) -> Route:
        return tuple(reversed(self.sides))

    def fold(self) -> bytes:
        h = self.hashes[0]
        for side, sib in zip(self.sides, self.siblings):
            h = node_hash(sib, h) if side else node_hash(h, sib)
        return h


class MerkleTree:
    def __init__(self, leaves: Sequence[bytes], txs: Sequence[Transaction] = ()):
        self.txs = tuple(txs)
        self.levels: list[list[bytes]] = [list(leaves)]
        while len(self.levels[-1]) > 1:
            prev = self.levels[-1]
            nxt = [node_hash(prev[i], prev[i + 1]) for i in range(0, len(prev) - 1, 2)]
            if len(prev) % 2:
                nxt.append(prev[-1])
            self.levels.append(nxt)

    @classmethod
    def build(cls, batch: Batch | Sequence[Transaction]) -> MerkleTree:
        txs = batch.txs if isinstance(batch, Batch) else tuple(batch)
        return cls([leaf_hash(t) for t in txs], txs)

    @property
    def leaf_count(self) -> int:
        return len(self.levels[0])

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def root(self) -> bytes:
        return self.levels[-1][0] if self.levels[0] else EMPTY_ROOT

    def width(self, level: int) -> int:
        return len(self.levels[level])

    def hash(self, ref: NodeRef) -> bytes:
        if not self.levels[0]:
            return EMPTY_ROOT
        return self.levels[ref.level][ref.index]

    def _carried(self, ref: NodeRef) -> bool:
        return ref.level > 0 and 2 * ref.index == self.width(ref.level - 1) - 1

    def canonical(self, ref: NodeRef) -> NodeRef:
        """Lowest layered position holding the same node (undoes carries)."""
        while self._carried(ref):
            ref = NodeRef(ref.level - 1, 2 * ref.index)
        return ref

    def child_refs(self, ref: NodeRef) -> tuple[NodeRef, NodeRef]:
        ref = self.canonical(ref)
        if ref.level == 0:
            raise LeafHasNoChildren(ref)
        return NodeRef(ref.level - 1, 2 * ref.index), NodeRef(ref.level - 1, 2 * ref.index + 1)

    def leaf_range(self, ref: NodeRef) -> range:
        ref = self.canonical(ref)
        lo = ref.index << ref.level
        return range(lo, min(lo + (1 << ref.level), self.leaf_count))

    def root_ref(self) -> NodeRef:
        return self.canonical(NodeRef(self.depth, 0))

    def node_at(self, route: Route) -> NodeRef | None:
        """Follow ``route`` from the root; None if it runs past a leaf."""
        if not self.levels[0]:
            return None if route else NodeRef(0, 0)
        ref = self.root_ref()
        for bit in route:
            if ref.level == 0:
                return None
            ref = self.canonical(self.child_refs(ref)[bit])
        return ref

    def route_of(self, ref: NodeRef) -> Route:
        ref = self.canonical(ref)
        route = []
        level, index = ref.level, ref.index
        while level < self.depth:
            if 2 * (index // 2) + 1 < self.width(level):
                route.append(index & 1)
            level, index = level + 1, index // 2
        return tuple(reversed(route))

    def all_nodes(self) -> list[NodeRef]:
        """Every distinct node, each once (carried copies collapsed)."""
        if not self.levels[0]:
            return []
        return [NodeRef(lv, i) for lv in range(len(self.levels)) for i in range(self.width(lv))
                if not self._carried(NodeRef(lv, i))]


def build(batch: Batch | Sequence[Transaction]) -> MerkleTree:
    return MerkleTree.build(batch)


def merkle_root(batch: Batch | Sequence[Transaction]) -> bytes:
    return MerkleTree.build(batch).root


def children(tree: MerkleTree, n: NodeRef) -> tuple[bytes, bytes]:
    left, right = tree.child_refs(n)
    return tree.hash(left), tree.hash(right)


def leaf_path(tree: MerkleTree, position: int) -> RootPath:
    if not 0 <= position < tree.leaf_count:
        raise PositionOutOfRange(position)
    nodes = [NodeRef(0, position)]
    hashes = [tree.levels[0][position]]
    sides: list[int] = []
    siblings: list[bytes] = []
    level, index = 0, position
    while level < tree.depth:
        layer = tree.levels[level]
        if 2 * (index // 2) + 1 < len(layer):
            sides.append(index & 1)
            siblings.append(layer[index ^ 1])
            nodes.append(NodeRef(level + 1, index // 2))
            hashes.append(tree.levels[level + 1][index // 2])
        level, index = level + 1, index // 2
    return RootPath(tuple(nodes), tuple(hashes), tuple(sides), tuple(siblings))


def midpoint(lo: int, hi: int) -> int:
    if hi - lo < 2:
        raise SegmentTooShort((lo, hi))
    return (lo + hi) // 2
