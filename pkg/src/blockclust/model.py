"""Shared domain types.

All value types are frozen; mappings are wrapped read-only so instances can be
shared freely between threads. Each type has a ``to_dict``/``from_dict`` pair
producing plain JSON-compatible structures.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Optional

import numpy as np

from .errors import (
    BadAddress,
    BadSelector,
    CycleOrForest,
    MultipleRoots,
    NonContiguousIndices,
)

_HEX = re.compile(r"^[0-9a-f]*$")


def _strip_hex(text: str) -> str:
    text = text.strip().lower()
    if text.startswith("0x"):
        text = text[2:]
    return text


@dataclass(frozen=True, order=True)
class Address:
    """A 20-byte account address."""

    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != 20:
            raise BadAddress(f"address must be 20 bytes, got {self.raw!r}")

    @classmethod
    def from_hex(cls, text: str) -> "Address":
        # short forms such as "0x01" are left-padded, the way clients read
        # numeric addresses
        body = _strip_hex(text)
        if not body or len(body) > 40 or not _HEX.match(body):
            raise BadAddress(f"not a hex address: {text!r}")
        return cls(bytes.fromhex(body.rjust(40, "0")))

    @property
    def hex(self) -> str:
        return self.raw.hex()

    def __str__(self) -> str:
        return "0x" + self.raw.hex()


@dataclass(frozen=True, order=True)
class Selector:
    """A 4-byte function selector."""

    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != 4:
            raise BadSelector(f"selector must be 4 bytes, got {self.raw!r}")

    @classmethod
    def from_hex(cls, text: str) -> "Selector":
        body = _strip_hex(text)
        if len(body) != 8 or not _HEX.match(body):
            raise BadSelector(f"selector must be 8 hex chars: {text!r}")
        return cls(bytes.fromhex(body))

    @property
    def hex(self) -> str:
        return self.raw.hex()

    def __str__(self) -> str:
        return self.raw.hex()


def method_token(name: str, selector: Optional[Selector]) -> str:
    """Identity of a called method: the selector when known, else the name.

    Selector tokens are written ``0x…``; Solidity identifiers cannot start
    with a digit, so the two forms never collide.
    """
    if selector is not None:
        return "0x" + selector.hex
    return name


@dataclass(frozen=True)
class CallRecord:
    index: int
    parent: Optional[int]
    callee: Address
    method_name: str = ""
    selector: Optional[Selector] = None

    @property
    def method(self) -> str:
        return method_token(self.method_name, self.selector)

    def to_dict(self) -> dict:
        d = {"i": self.index, "to": str(self.callee)}
        if self.parent is not None:
            d["p"] = self.parent
        if self.method_name:
            d["m"] = self.method_name
        if self.selector is not None:
            d["s"] = self.selector.hex
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CallRecord":
        sel = d.get("s")
        return cls(
            index=d["i"],
            parent=d.get("p"),
            callee=Address.from_hex(d["to"]),
            method_name=d.get("m") or "",
            selector=Selector.from_hex(sel) if sel else None,
        )


@dataclass(frozen=True)
class TransactionTrace:
    tx_id: str
    calls: tuple[CallRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "calls", tuple(self.calls))

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        """Child indices per call, in execution order."""
        kids: list[list[int]] = [[] for _ in self.calls]
        for c in self.calls:
            if c.parent is not None:
                kids[c.parent].append(c.index)
        return tuple(tuple(k) for k in kids)

    def to_dict(self) -> dict:
        return {"tx_id": self.tx_id, "calls": [c.to_dict() for c in self.calls]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransactionTrace":
        return cls(str(d["tx_id"]), tuple(CallRecord.from_dict(c) for c in d["calls"]))


def validate_trace(trace: TransactionTrace) -> None:
    """Raise a :class:`~blockclust.errors.TraceError` unless ``trace`` is one tree.

    Records must be listed in pre-order with indices ``0..n-1`` and every
    parent must precede its child.
    """
    if not trace.calls:
        raise CycleOrForest(f"{trace.tx_id}: no calls")
    for pos, c in enumerate(trace.calls):
        if c.index != pos:
            raise NonContiguousIndices(f"{trace.tx_id}: record {pos} has index {c.index}")
    roots = [c.index for c in trace.calls if c.parent is None]
    if len(roots) > 1:
        raise MultipleRoots(f"{trace.tx_id}: roots at {roots}")
    for c in trace.calls:
        if c.parent is None:
            continue
        if not (0 <= c.parent < c.index):
            raise CycleOrForest(f"{trace.tx_id}: record {c.index} has parent {c.parent}")
    if roots != [0]:
        raise CycleOrForest(f"{trace.tx_id}: root must be record 0")


class ContractClass(str, Enum):
    FACTORY_DEPLOYED = "factory_deployed"
    ASSET = "asset"
    OTHER = "other"


@dataclass(frozen=True)
class ContractInfo:
    address: Address
    protocol: Optional[str] = None
    contract_class: ContractClass = ContractClass.OTHER
    selectors: frozenset[Selector] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "contract_class", ContractClass(self.contract_class))
        object.__setattr__(self, "selectors", frozenset(self.selectors))

    def to_dict(self) -> dict:
        return {
            "address": str(self.address),
            "protocol": self.protocol,
            "class": self.contract_class.value,
            "selectors": sorted(s.hex for s in self.selectors),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ContractInfo":
        return cls(
            Address.from_hex(d["address"]),
            d.get("protocol"),
            ContractClass(d["class"]),
            frozenset(Selector.from_hex(s) for s in d.get("selectors", ())),
        )


ContractRegistry = dict  # Address -> ContractInfo


class Edge(NamedTuple):
    parent: int
    child: int
    method: str  # method token, see method_token()
    rank: int


@dataclass(frozen=True)
class BuildingBlock:
    """A protocol-rooted call subtree.

    Local node ids are pre-order positions (root is 0). ``edges`` are listed in
    pre-order of their child node.
    """

    block_id: str
    root_address: Address
    root_method: str
    root_selector: Optional[Selector]
    nodes: tuple[tuple[int, Address], ...]
    edges: tuple[Edge, ...]
    count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple((int(i), a) for i, a in self.nodes))
        object.__setattr__(self, "edges", tuple(Edge(*e) for e in self.edges))
        if self.count < 0:
            raise ValueError("count must be non-negative")

    @property
    def root_token(self) -> str:
        return method_token(self.root_method, self.root_selector)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def children(self) -> dict[int, tuple[Edge, ...]]:
        kids: dict[int, list[Edge]] = {i: [] for i, _ in self.nodes}
        for e in self.edges:
            kids[e.parent].append(e)
        return {i: tuple(sorted(k, key=lambda e: e.rank)) for i, k in kids.items()}

    @cached_property
    def parent_of(self) -> dict[int, int]:
        return {e.child: e.parent for e in self.edges}

    @cached_property
    def address_of(self) -> dict[int, Address]:
        return dict(self.nodes)

    def outdegree(self, node: int) -> int:
        return len(self.children[node])

    def to_dict(self) -> dict:
        return {
            "id": self.block_id,
            "root": str(self.root_address),
            "root_method": self.root_method,
            "root_selector": self.root_selector.hex if self.root_selector else None,
            "nodes": [[i, str(a)] for i, a in self.nodes],
            "edges": [list(e) for e in self.edges],
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BuildingBlock":
        sel = d.get("root_selector")
        return cls(
            block_id=d["id"],
            root_address=Address.from_hex(d["root"]),
            root_method=d.get("root_method", ""),
            root_selector=Selector.from_hex(sel) if sel else None,
            nodes=tuple((int(i), Address.from_hex(a)) for i, a in d["nodes"]),
            edges=tuple(Edge(int(p), int(c), str(m), int(r)) for p, c, m, r in d["edges"]),
            count=int(d.get("count", 1)),
        )


class Scheme(str, Enum):
    NONE = "none"
    THREE_CLASS = "three_class"
    SIGNATURES = "signatures"
    SIGNATURE_GROUP = "signature_group"

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        return _SCHEME_ALIASES.get(text, None) or cls(text)

    @property
    def short(self) -> str:
        return {v: k for k, v in _SCHEME_ALIASES.items()}[self]


_SCHEME_ALIASES = {
    "none": Scheme.NONE,
    "3class": Scheme.THREE_CLASS,
    "sig": Scheme.SIGNATURES,
    "siggroup": Scheme.SIGNATURE_GROUP,
}


@dataclass(frozen=True)
class FeatureAssignment:
    scheme: Scheme
    features: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "features", MappingProxyType(dict(self.features)))

    def covers(self, block: BuildingBlock) -> bool:
        return all(i in self.features for i, _ in block.nodes)

    def to_dict(self) -> dict:
        return {"scheme": self.scheme.value, "features": {str(k): v for k, v in self.features.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureAssignment":
        return cls(Scheme(d["scheme"]), {int(k): int(v) for k, v in d["features"].items()})


FFC_CATEGORIES = (
    "Swap",
    "Lock Capital",
    "Redeem or Withdraw",
    "Borrow",
    "Get Interest or Rewards",
    "Repay",
    "Governance",
    "Liquidate",
    "Others",
)


@dataclass(frozen=True)
class LabelSet:
    """Target labels per block id.

    ``excluded`` holds ids that carry a label but are left out of evaluation
    (financial-category "Others").
    """

    kind: str  # "protocol" | "ffc"
    labels: Mapping[str, str]
    excluded: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.kind not in ("protocol", "ffc"):
            raise ValueError(f"unknown label kind {self.kind!r}")
        object.__setattr__(self, "labels", MappingProxyType(dict(self.labels)))
        object.__setattr__(self, "excluded", frozenset(self.excluded))
        if self.kind == "ffc":
            bad = set(self.labels.values()) - set(FFC_CATEGORIES)
            if bad:
                raise ValueError(f"not a financial category: {sorted(bad)}")

    def evaluated(self) -> dict[str, str]:
        return {k: v for k, v in self.labels.items() if k not in self.excluded}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "labels": dict(self.labels), "excluded": sorted(self.excluded)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabelSet":
        return cls(d["kind"], d["labels"], frozenset(d.get("excluded", ())))


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """One ``dim``-vector per block id; row order follows ``ids``."""

    ids: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.array(self.vectors, dtype=np.float64)
        vec.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "vectors", vec)
        if vec.ndim != 2 or vec.shape[0] != len(self.ids):
            raise ValueError(f"expected {len(self.ids)} rows, got shape {vec.shape}")
        if vec.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        if not np.isfinite(vec).all():
            raise ValueError("embedding contains non-finite entries")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate block ids")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def rows(self) -> dict[str, np.ndarray]:
        return dict(zip(self.ids, self.vectors))

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(self.vectors, other.vectors)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "rows": {i: v.tolist() for i, v in zip(self.ids, self.vectors)}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EmbeddingMatrix":
        ids = tuple(d["rows"])
        vecs = np.array([d["rows"][i] for i in ids], dtype=np.float64).reshape(len(ids), d["dim"])
        return cls(ids, vecs)


class Metrics(NamedTuple):
    homogeneity: float
    completeness: float
    v_measure: float
    purity: float


@dataclass(frozen=True)
class ClusterAssignment:
    delta: float
    assignments: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "assignments", MappingProxyType(dict(self.assignments)))
        ids = set(self.assignments.values())
        if ids != set(range(len(ids))):
            raise ValueError("cluster ids must be contiguous from 0")

    @property
    def n_clusters(self) -> int:
        return len(set(self.assignments.values()))

    def to_dict(self) -> dict:
        return {"delta": self.delta, "assignments": dict(self.assignments)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterAssignment":
        return cls(float(d["delta"]), {k: int(v) for k, v in d["assignments"].items()})


@dataclass(frozen=True)
class ClusteringRun:
    assignment: ClusterAssignment
    metrics: Metrics

    def __post_init__(self):
        object.__setattr__(self, "metrics", Metrics(*self.metrics))
        for name, value in self.metrics._asdict().items():
            if not (0.0 <= value <= 1.0) or math.isnan(value):
                raise ValueError(f"{name}={value} outside [0, 1]")

    @property
    def delta(self) -> float:
        return self.assignment.delta

    @property
    def n_clusters(self) -> int:
        return self.assignment.n_clusters

    def to_dict(self) -> dict:
        return {**self.assignment.to_dict(), "metrics": self.metrics._asdict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusteringRun":
        m = d["metrics"]
        return cls(
            ClusterAssignment.from_dict(d),
            Metrics(m["homogeneity"], m["completeness"], m["v_measure"], m["purity"]),
        )


def registry_from(infos: Iterable[ContractInfo]) -> ContractRegistry:
    return {info.address: info for info in infos}
