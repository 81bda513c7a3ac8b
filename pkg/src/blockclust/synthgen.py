"""Synthetic trace corpora with planted protocol archetypes.

Each protocol owns a router (the block root), a controller and a handful of
factory-deployed pools. Routers, controllers and pools of one protocol share
most of their selectors, so they look alike to selector-based features.
Each protocol has one random body shape. Its archetypes reuse that shape
under different root methods, with pools, assets, called methods and sibling
order redrawn, so they are distinct blocks that differ mostly below the
resolution of the grouped-signature features. With two or more archetypes
per protocol they all embed the same controller subtree, which is itself
protocol-rooted and therefore extracted as a nested block.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidSpec
from .ingestion import selector_of, write_registry, write_traces
from .labeling import ffc_label
from .model import (
    Address,
    CallRecord,
    ContractClass,
    ContractInfo,
    ContractRegistry,
    Selector,
    TransactionTrace,
)

# camel-case root names per category; each is checked against the labeler
ROOT_NAMES = {
    "Swap": ["swapExactTokensForTokens", "swapTokensForExactETH", "exchange", "exchangeUnderlying", "tokenSwap"],
    "Lock Capital": ["deposit", "addLiquidity", "stake", "lockTokens", "lend", "collateralize", "depositFor"],
    "Redeem or Withdraw": ["withdraw", "removeLiquidity", "unstake", "unlockTokens", "withdrawAll"],
    "Borrow": ["borrow", "borrowAsset", "flashBorrow"],
    "Get Interest or Rewards": ["getReward", "claimRewards", "claimFees", "harvest", "earn"],
    "Repay": ["repay", "repayDebt", "repayAll"],
    "Governance": ["vote", "castVote", "voteFor"],
    "Liquidate": ["liquidate", "liquidationCall", "liquidatePosition"],
}
CATEGORIES = tuple(ROOT_NAMES)
ERC20 = ("transfer(address,uint256)", "transferFrom(address,address,uint256)", "approve(address,uint256)",
         "balanceOf(address)", "totalSupply()", "allowance(address,address)")
ERC20_EXTRAS = ("name()", "symbol()", "decimals()", "permit(address,address,uint256,uint256,uint8,bytes32,bytes32)",
                "nonces(address)", "DOMAIN_SEPARATOR()", "mint(address,uint256)", "burn(uint256)")
ASSET_CALLS = ("transfer(address,uint256)", "transferFrom(address,address,uint256)", "balanceOf(address)")


@dataclass(frozen=True)
class SynthSpec:
    n_protocols: int = 10
    archetypes_per_protocol: int = 3
    blocks_per_archetype: int = 100
    noise: float = 0.05
    seed: int = 0
    n_assets: int = 8
    pools_per_protocol: int = 4
    shared_selectors: int = 12  # selectors every contract of a protocol carries
    shared_subtree: bool = True

    def validate(self) -> None:
        if not 0.0 <= self.noise <= 1.0:
            raise InvalidSpec(f"noise must be in [0, 1], got {self.noise}")
        for name in ("n_protocols", "archetypes_per_protocol", "blocks_per_archetype", "n_assets",
                     "pools_per_protocol", "shared_selectors"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        if self.archetypes_per_protocol > len(CATEGORIES):
            raise InvalidSpec(f"at most {len(CATEGORIES)} archetypes per protocol")


@dataclass
class Node:
    """Template call: callee, method signature, children."""

    callee: Address
    method: str
    selector: Selector
    kids: list["Node"] = field(default_factory=list)

    def copy(self) -> "Node":
        return Node(self.callee, self.method, self.selector, [k.copy() for k in self.kids])


@dataclass(frozen=True)
class TruthRow:
    tx_id: str
    root_index: int
    protocol: str
    ffc: str


@dataclass
class SynthCorpus:
    traces: list[TransactionTrace]
    registry: ContractRegistry
    truth: list[TruthRow]


class _World:
    def __init__(self, spec: SynthSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.registry: ContractRegistry = {}
        self.sig_cache: dict[str, Selector] = {}
        self.assets: list[Address] = []
        self.protocols: list[dict] = []

    def sel(self, signature: str) -> Selector:
        if signature not in self.sig_cache:
            self.sig_cache[signature] = selector_of(signature)
        return self.sig_cache[signature]

    def new_address(self) -> Address:
        while True:
            a = Address(self.rng.bytes(20))
            if a not in self.registry:
                return a

    def add(self, protocol: Optional[str], cls: ContractClass, signatures) -> Address:
        addr = self.new_address()
        self.registry[addr] = ContractInfo(addr, protocol, cls, frozenset(self.sel(s) for s in signatures))
        return addr

    def build(self) -> None:
        spec, rng = self.spec, self.rng
        for _ in range(spec.n_assets):
            extras = [e for e in ERC20_EXTRAS if rng.random() < 0.5]
            self.assets.append(self.add(None, ContractClass.ASSET, ERC20 + tuple(extras)))
        for p in range(spec.n_protocols):
            name = f"Protocol{p:02d}"
            tag = f"p{p:02d}"
            shared = [f"{tag}Fn{j}(uint256)" for j in range(spec.shared_selectors)]

            def own(role: str, k: int = 2) -> list[str]:
                return shared + [f"{tag}{role}Op{j}(address)" for j in range(k)]

            router = self.add(name, ContractClass.OTHER, own("Router"))
            controller = self.add(name, ContractClass.OTHER, own("Controller"))
            pools = [self.add(None, ContractClass.FACTORY_DEPLOYED, own(f"Pool{k}"))
                     for k in range(spec.pools_per_protocol)]
            self.protocols.append(
                {"name": name, "tag": tag, "shared": shared, "router": router, "controller": controller,
                 "pools": pools}
            )

    # template construction -------------------------------------------------
    def asset_call(self) -> Node:
        sig = ASSET_CALLS[int(self.rng.integers(len(ASSET_CALLS)))]
        return Node(self.assets[int(self.rng.integers(len(self.assets)))], sig, self.sel(sig))

    def protocol_call(self, proto: dict, callee: Address) -> Node:
        sig = proto["shared"][int(self.rng.integers(len(proto["shared"])))]
        return Node(callee, sig, self.sel(sig))

    def pool_subtree(self, proto: dict, depth: int) -> Node:
        pool = proto["pools"][int(self.rng.integers(len(proto["pools"])))]
        node = self.protocol_call(proto, pool)
        for _ in range(int(self.rng.integers(1, 5))):
            if depth < 3 and self.rng.random() < 0.3:
                node.kids.append(self.pool_subtree(proto, depth + 1))
            else:
                node.kids.append(self.asset_call())
        return node

    def shared_subtree(self, proto: dict) -> Node:
        sig = f"{proto['tag']}ControllerOp0(address)"
        node = Node(proto["controller"], sig, self.sel(sig))
        for _ in range(2):
            pool = proto["pools"][int(self.rng.integers(len(proto["pools"])))]
            leaf = self.protocol_call(proto, pool)
            leaf.kids.append(self.asset_call())
            node.kids.append(leaf)
        return node

    def rebind(self, node: Node, proto: dict) -> Node:
        """Same shape as ``node`` with callees and methods redrawn within their families."""
        info = self.registry[node.callee]
        if info.contract_class is ContractClass.ASSET:
            out = self.asset_call()
        elif info.contract_class is ContractClass.FACTORY_DEPLOYED:
            out = self.protocol_call(proto, proto["pools"][int(self.rng.integers(len(proto["pools"])))])
        else:
            out = Node(node.callee, node.method, node.selector)
        out.kids = [self.rebind(k, proto) for k in node.kids]
        return out

    def archetype(self, proto: dict, root_name: str, shared: Optional[Node]) -> Node:
        """The protocol body under a new root method, rebound and reordered."""
        sig = f"{root_name}(uint256)"
        root = Node(proto["router"], root_name, self.sel(sig))
        root.kids = [self.rebind(b, proto) for b in proto["body"]]
        if shared is not None:
            root.kids.append(shared.copy())
        root.kids = [root.kids[i] for i in self.rng.permutation(len(root.kids))]
        return root

    # noise -----------------------------------------------------------------
    def perturb(self, root: Node) -> None:
        """One leaf insertion or deletion plus one callee swap."""
        rng = self.rng
        nodes: list[tuple[Node, Optional[Node]]] = []
        stack = [(root, None)]
        while stack:
            n, parent = stack.pop()
            nodes.append((n, parent))
            stack.extend((k, n) for k in n.kids)
        # edits stay below the router so the root's own neighbourhood is kept
        leaves = [(n, p) for n, p in nodes if not n.kids and p is not None and p is not root and len(p.kids) > 1]
        hosts = [n for n, p in nodes if p is not None and self.registry[n.callee].contract_class
                 is not ContractClass.ASSET] or [root]
        if leaves and rng.random() < 0.5:
            leaf, parent = leaves[int(rng.integers(len(leaves)))]
            parent.kids.remove(leaf)
        else:
            host = hosts[int(rng.integers(len(hosts)))]
            host.kids.insert(int(rng.integers(len(host.kids) + 1)), self.asset_call())
        # callee swap at a non-root node, within the same contract family
        candidates = [n for n, p in nodes if p is not None]
        if candidates:
            target = candidates[int(rng.integers(len(candidates)))]
            info = self.registry[target.callee]
            if info.contract_class is ContractClass.ASSET:
                target.callee = self.assets[int(rng.integers(len(self.assets)))]
            elif info.contract_class is ContractClass.FACTORY_DEPLOYED:
                family = next(pr["pools"] for pr in self.protocols if target.callee in pr["pools"])
                target.callee = family[int(rng.integers(len(family)))]


def _flatten(root: Node, tx_id: str) -> TransactionTrace:
    calls: list[CallRecord] = []
    stack: list[tuple[Node, Optional[int]]] = [(root, None)]
    while stack:
        node, parent = stack.pop()
        idx = len(calls)
        name = node.method.split("(")[0]
        calls.append(CallRecord(idx, parent, node.callee, name, node.selector))
        stack.extend((k, idx) for k in reversed(node.kids))
    return TransactionTrace(tx_id, tuple(calls))


def synthesize(spec: SynthSpec = SynthSpec()) -> SynthCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    world = _World(spec, rng)
    world.build()

    templates = []  # (protocol dict, category, root template)
    for proto in world.protocols:
        cats = rng.choice(len(CATEGORIES), size=spec.archetypes_per_protocol, replace=False)
        proto["body"] = [
            world.pool_subtree(proto, 1) if rng.random() < 0.7 else world.asset_call()
            for _ in range(int(rng.integers(4, 8)))
        ]
        shared = world.shared_subtree(proto) if spec.shared_subtree and spec.archetypes_per_protocol > 1 else None
        for c in cats:
            cat = CATEGORIES[int(c)]
            names = ROOT_NAMES[cat]
            root_name = names[int(rng.integers(len(names)))]
            templates.append((proto, cat, world.archetype(proto, root_name, shared)))

    jobs = [(t, k) for t in range(len(templates)) for k in range(spec.blocks_per_archetype)]
    order = rng.permutation(len(jobs))
    traces, truth = [], []
    for n, j in enumerate(order):
        proto, cat, template = templates[jobs[j][0]]
        root = template.copy()
        if rng.random() < spec.noise:
            world.perturb(root)
        tx_id = f"tx{n:06d}"
        trace = _flatten(root, tx_id)
        traces.append(trace)
        for call in trace.calls:
            info = world.registry.get(call.callee)
            if info is not None and info.protocol and trace.children[call.index]:
                truth.append(TruthRow(tx_id, call.index, info.protocol, ffc_label(call.method_name)))
        assert ffc_label(template.method) == cat
    return SynthCorpus(traces, world.registry, truth)


def write_truth(rows, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tx_id", "root_index", "protocol", "ffc"])
        for r in rows:
            w.writerow([r.tx_id, r.root_index, r.protocol, r.ffc])


def generate(spec: SynthSpec, out_dir: str | os.PathLike) -> tuple[str, str, str]:
    """Write ``traces.jsonl``, ``registry.csv`` and ``truth.csv`` into ``out_dir``."""
    corpus = synthesize(spec)
    os.makedirs(out_dir, exist_ok=True)
    paths = tuple(os.path.join(out_dir, f) for f in ("traces.jsonl", "registry.csv", "truth.csv"))
    write_traces(corpus.traces, paths[0])
    write_registry(corpus.registry, paths[1])
    write_truth(corpus.truth, paths[2])
    return paths
