"""Builders shared by the test modules."""

from __future__ import annotations

import random
from typing import Optional, Sequence

from blockclust.extraction import make_block
from blockclust.model import (
    Address,
    CallRecord,
    ContractClass,
    ContractInfo,
    Selector,
    TransactionTrace,
)


def addr(n: int) -> Address:
    return Address.from_hex(f"{n:040x}")


def sel(text: str) -> Selector:
    return Selector.from_hex(text)


def trace(parents: Sequence[Optional[int]], callees: Sequence[int], methods: Optional[Sequence[str]] = None,
          tx_id: str = "t") -> TransactionTrace:
    methods = methods or ["m"] * len(parents)
    return TransactionTrace(
        tx_id, tuple(CallRecord(i, p, addr(c), m) for i, (p, c, m) in enumerate(zip(parents, callees, methods)))
    )


def info(n: int, protocol: Optional[str] = None, cls: ContractClass = ContractClass.OTHER, selectors=()) -> ContractInfo:
    return ContractInfo(addr(n), protocol, cls, frozenset(sel(s) if isinstance(s, str) else s for s in selectors))


def registry(*infos: ContractInfo) -> dict:
    return {i.address: i for i in infos}


def random_parents(rng: random.Random, n_edges: int) -> list[Optional[int]]:
    """Parent list of a random ordered tree in pre-order (parent always earlier)."""
    parents: list[Optional[int]] = [None]
    # keep a path stack so the sequence is a valid pre-order
    stack = [0]
    for i in range(1, n_edges + 1):
        while len(stack) > 1 and rng.random() < 0.4:
            stack.pop()
        parents.append(stack[-1])
        stack.append(i)
    return parents


def block_from_parents(parents: Sequence[Optional[int]], methods: Sequence[str], addresses: Sequence[int],
                       root_method: str = "root"):
    """Block whose node i has parent ``parents[i]`` and incoming method ``methods[i]``."""
    kids: dict[int, list[int]] = {i: [] for i in range(len(parents))}
    for i, p in enumerate(parents):
        if p is not None:
            kids[p].append(i)
    edges = []
    for p, ks in kids.items():
        for r, c in enumerate(ks):
            edges.append((p, c, methods[c], r))
    edges.sort(key=lambda e: e[1])
    nodes = [(i, addr(a)) for i, a in enumerate(addresses)]
    return make_block(addr(addresses[0]), root_method, nodes, edges)


Tree = tuple  # (incoming method, tuple of child trees)


def random_tree(rng: random.Random, n_edges: int, methods: Sequence[str]) -> Tree:
    parents = random_parents(rng, n_edges)
    kids: dict[int, list[int]] = {i: [] for i in range(len(parents))}
    for i, p in enumerate(parents[1:], start=1):
        kids[p].append(i)
    labels = [rng.choice(methods) for _ in parents]

    def build(i):
        return (labels[i], tuple(build(c) for c in kids[i]))

    return build(0)


def tree_size(tree: Tree) -> int:
    return 1 + sum(tree_size(c) for c in tree[1])


def block_from_tree(tree: Tree, addresses: Optional[Sequence[int]] = None):
    """Block for a nested (method, children) tree; the root's method is the root method."""
    n = tree_size(tree)
    addresses = list(addresses) if addresses is not None else list(range(1, n + 1))
    nodes, edges = [], []

    def visit(t, parent, rank):
        local = len(nodes)
        nodes.append((local, addr(addresses[local])))
        if parent is not None:
            edges.append((parent, local, t[0], rank))
        for r, c in enumerate(t[1]):
            visit(c, local, r)

    visit(tree, None, 0)
    return make_block(addr(addresses[0]), tree[0], nodes, edges)
