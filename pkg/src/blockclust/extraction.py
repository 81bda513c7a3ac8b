"""Building-block extraction, canonical hashing and corpus aggregation."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Iterator, Optional, Sequence

from .artifacts import data_lines, write_lines
from .errors import NotARoot
from .model import (
    Address,
    BuildingBlock,
    ContractRegistry,
    Edge,
    Selector,
    TransactionTrace,
)

Corpus = list  # list[BuildingBlock], unique ids, sorted by (-count, id)


def find_block_roots(trace: TransactionTrace, registry: ContractRegistry) -> list[int]:
    """Calls to protocol-labeled contracts that make at least one call themselves.

    Nested qualifying calls are all returned, in execution order.
    """
    roots = []
    for call in trace.calls:
        info = registry.get(call.callee)
        if info is not None and info.protocol and trace.children[call.index]:
            roots.append(call.index)
    return roots


def walk(block: BuildingBlock, node: int = 0) -> Iterator[tuple[Edge, int]]:
    """Yield (edge, depth of child relative to ``node``) in pre-order."""
    # iterative: EVM call depth can exceed the interpreter recursion limit
    stack = [(e, 1) for e in reversed(block.children[node])]
    while stack:
        e, depth = stack.pop()
        yield e, depth
        stack.extend((c, depth + 1) for c in reversed(block.children[e.child]))


def _pack_int(v: int) -> bytes:
    return struct.pack(">q", v)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack(">I", len(b)) + b


def serialize(block: BuildingBlock) -> bytes:
    """Address-free byte form of a block's ordered structure.

    Layout: root method token, root outdegree, then for every edge in
    pre-order (child depth, sibling rank, child outdegree, method token).
    Every field is length-prefixed or fixed-width, so the encoding is
    injective on ordered method-labeled trees.
    """
    parts = [_pack_str(block.root_token), _pack_int(block.outdegree(0))]
    for e, depth in walk(block):
        parts += [_pack_int(depth), _pack_int(e.rank), _pack_int(block.outdegree(e.child)), _pack_str(e.method)]
    return b"".join(parts)


def canonical_hash(block: BuildingBlock) -> str:
    return hashlib.sha256(serialize(block)).hexdigest()


def make_block(
    root_address: Address,
    root_method: str,
    nodes: Sequence[tuple[int, Address]],
    edges: Sequence[tuple[int, int, str, int]],
    root_selector: Optional[Selector] = None,
    count: int = 1,
) -> BuildingBlock:
    """Build a block and fill in its canonical id."""
    draft = BuildingBlock("", root_address, root_method, root_selector, tuple(nodes), tuple(edges), count)
    return BuildingBlock(canonical_hash(draft), root_address, root_method, root_selector, draft.nodes, draft.edges, count)


def extract_block(trace: TransactionTrace, root: int) -> BuildingBlock:
    """The subtree below call ``root`` with nodes renumbered in pre-order."""
    if not (0 <= root < len(trace.calls)) or not trace.children[root]:
        raise NotARoot(f"{trace.tx_id}: call {root} has no outgoing calls")
    nodes: list[tuple[int, Address]] = []
    edges: list[Edge] = []
    stack = [(root, None, 0)]  # (call index, parent local id, sibling rank)
    while stack:
        idx, parent_local, rank = stack.pop()
        local = len(nodes)
        call = trace.calls[idx]
        nodes.append((local, call.callee))
        if parent_local is not None:
            edges.append(Edge(parent_local, local, call.method, rank))
        kids = trace.children[idx]
        for r in range(len(kids) - 1, -1, -1):
            stack.append((kids[r], local, r))
    rc = trace.calls[root]
    return make_block(rc.callee, rc.method_name, nodes, edges, rc.selector)


def blocks_of(trace: TransactionTrace, registry: ContractRegistry) -> list[BuildingBlock]:
    return [extract_block(trace, r) for r in find_block_roots(trace, registry)]


def _representative_key(block: BuildingBlock):
    return tuple(a.raw for _, a in block.nodes)


def aggregate(blocks: Iterable[BuildingBlock]) -> Corpus:
    """Merge blocks sharing an id, summing their counts.

    The kept representative is the one with the smallest address tuple, so
    merging partial corpora in any order gives the same result.
    """
    reps: dict[str, BuildingBlock] = {}
    counts: dict[str, int] = {}
    for b in blocks:
        counts[b.block_id] = counts.get(b.block_id, 0) + b.count
        cur = reps.get(b.block_id)
        if cur is None or _representative_key(b) < _representative_key(cur):
            reps[b.block_id] = b
    out = [
        BuildingBlock(bid, b.root_address, b.root_method, b.root_selector, b.nodes, b.edges, counts[bid])
        for bid, b in reps.items()
    ]
    out.sort(key=lambda b: (-b.count, b.block_id))
    return out


def extract_corpus(traces: Sequence[TransactionTrace], registry: ContractRegistry, workers: int = 1) -> Corpus:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trace = list(pool.map(lambda t: blocks_of(t, registry), traces))
    else:
        per_trace = [blocks_of(t, registry) for t in traces]
    return aggregate(b for blocks in per_trace for b in blocks)


def top_k_cut(corpus: Iterable[BuildingBlock], k: int) -> Corpus:
    if k < 1:
        raise ValueError("top_k must be >= 1")
    return sorted(corpus, key=lambda b: (-b.count, b.block_id))[:k]


def drop_single_node(corpus: Iterable[BuildingBlock]) -> Corpus:
    return [b for b in corpus if b.n_nodes >= 2]


def filter_corpus(corpus: Iterable[BuildingBlock], top_k: int) -> Corpus:
    """Keep the ``top_k`` most frequent blocks (ties by id), then drop single-node ones."""
    return drop_single_node(top_k_cut(corpus, top_k))


def write_blocks(corpus: Iterable[BuildingBlock], path: str | os.PathLike, manifest: Optional[str] = None) -> None:
    write_lines(path, (json.dumps(b.to_dict(), separators=(",", ":")) for b in corpus), manifest)


def read_blocks(path: str | os.PathLike) -> Corpus:
    return [BuildingBlock.from_dict(json.loads(line)) for line in data_lines(path)]
