"""Node-feature schemes.

Every scheme maps a block's nodes to integer tokens:

* ``none``            total degree of the node inside the block tree
* ``three_class``     factory-deployed / asset / other contract class
* ``signatures``      one token per distinct selector set
* ``signature_group`` one token per Ward group of selector sets under
                      Jaccard distance
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .artifacts import data_lines
from .clustering import cut_tree, ward_linkage
from .errors import EmptyRegistry
from .model import (
    BuildingBlock,
    ContractClass,
    ContractRegistry,
    FeatureAssignment,
    Scheme,
    Selector,
)

CLASS_TOKENS = {
    ContractClass.FACTORY_DEPLOYED: 0,
    ContractClass.ASSET: 1,
    ContractClass.OTHER: 2,
}
UNKNOWN_SIGNATURE = 0  # signatures scheme: empty or unregistered selector set
UNKNOWN_GROUP = -1  # signature_group scheme: reserved group


def fingerprint(selectors: Iterable[Selector]) -> str:
    """Order-independent digest of a selector set."""
    text = ",".join(sorted({s.hex for s in selectors}))
    return hashlib.sha256(text.encode("ascii")).hexdigest()[:32]


def _node_selectors(block: BuildingBlock, registry: ContractRegistry) -> dict[int, frozenset]:
    out = {}
    for i, addr in block.nodes:
        info = registry.get(addr)
        out[i] = info.selectors if info is not None else frozenset()
    return out


def feature_none(block: BuildingBlock) -> FeatureAssignment:
    return FeatureAssignment(
        Scheme.NONE,
        {i: block.outdegree(i) + (0 if i == 0 else 1) for i, _ in block.nodes},
    )


def feature_3class(block: BuildingBlock, registry: ContractRegistry) -> FeatureAssignment:
    feats = {}
    for i, addr in block.nodes:
        info = registry.get(addr)
        cls = info.contract_class if info is not None else ContractClass.OTHER
        feats[i] = CLASS_TOKENS[cls]
    return FeatureAssignment(Scheme.THREE_CLASS, feats)


class SignatureTable:
    """Interns every distinct non-empty selector set of a registry.

    Ids start at 1 in fingerprint order; 0 is the shared unknown token.
    """

    def __init__(self, registry: ContractRegistry):
        sets = {fingerprint(i.selectors): i.selectors for i in registry.values() if i.selectors}
        self.sets = {fp: sets[fp] for fp in sorted(sets)}
        self.ids = {fp: k + 1 for k, fp in enumerate(self.sets)}

    def token(self, selectors: frozenset) -> int:
        if not selectors:
            return UNKNOWN_SIGNATURE
        return self.ids.get(fingerprint(selectors), UNKNOWN_SIGNATURE)

    def __len__(self) -> int:
        return len(self.ids)


def feature_selectors(block: BuildingBlock, registry: ContractRegistry,
                      table: Optional[SignatureTable] = None) -> FeatureAssignment:
    table = table or SignatureTable(registry)
    sels = _node_selectors(block, registry)
    return FeatureAssignment(Scheme.SIGNATURES, {i: table.token(s) for i, s in sels.items()})


def jaccard_distances(sets: Sequence[frozenset]) -> np.ndarray:
    """Square matrix of 1 - |A∩B|/|A∪B| over non-empty sets."""
    vocab = {s: k for k, s in enumerate(sorted({x for s in sets for x in s}))}
    m = np.zeros((len(sets), len(vocab)), dtype=np.float64)
    for r, s in enumerate(sets):
        m[r, [vocab[x] for x in s]] = 1.0
    inter = m @ m.T
    sizes = m.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    dist = 1.0 - inter / union
    np.fill_diagonal(dist, 0.0)
    return dist


def _condensed(square: np.ndarray) -> np.ndarray:
    return square[np.triu_indices(square.shape[0], k=1)]


@dataclass(frozen=True)
class SignatureGroups:
    groups: Mapping[str, int]  # fingerprint -> group id
    threshold: float
    heights: tuple[float, ...] = ()

    @property
    def n_groups(self) -> int:
        return len(set(self.groups.values()))

    def token(self, selectors: frozenset) -> int:
        if not selectors:
            return UNKNOWN_GROUP
        return self.groups.get(fingerprint(selectors), UNKNOWN_GROUP)


def build_signature_groups(registry: ContractRegistry, threshold: float = 1.5) -> SignatureGroups:
    """Group distinct selector sets by Ward linkage on Jaccard distance.

    Sets merge while the linkage height stays strictly below ``threshold``.
    Group ids are contiguous, ordered by each group's smallest fingerprint.
    """
    table = SignatureTable(registry)
    if not table.sets:
        raise EmptyRegistry("registry has no contract with selectors")
    fps = list(table.sets)
    n = len(fps)
    if n == 1:
        return SignatureGroups({fps[0]: 0}, threshold)
    Z = ward_linkage(_condensed(jaccard_distances([table.sets[fp] for fp in fps])))
    comps = cut_tree(Z, n, threshold)
    # fps are sorted, so the first member seen is the smallest
    order: dict[int, int] = {}
    for comp in comps:
        order.setdefault(int(comp), len(order))
    return SignatureGroups(
        {fp: order[int(c)] for fp, c in zip(fps, comps)},
        threshold,
        tuple(float(h) for h in Z[:, 2]),
    )


def feature_group(block: BuildingBlock, groups: SignatureGroups, registry: ContractRegistry) -> FeatureAssignment:
    sels = _node_selectors(block, registry)
    return FeatureAssignment(Scheme.SIGNATURE_GROUP, {i: groups.token(s) for i, s in sels.items()})


class Featurizer:
    """Featurizes whole corpora under one scheme, sharing the lookup tables."""

    def __init__(self, scheme: Scheme | str, registry: ContractRegistry, group_threshold: float = 1.5):
        self.scheme = Scheme.parse(scheme) if isinstance(scheme, str) else scheme
        self.registry = registry
        self.table = SignatureTable(registry) if self.scheme is Scheme.SIGNATURES else None
        self.groups = (
            build_signature_groups(registry, group_threshold) if self.scheme is Scheme.SIGNATURE_GROUP else None
        )

    def __call__(self, block: BuildingBlock) -> FeatureAssignment:
        if self.scheme is Scheme.NONE:
            return feature_none(block)
        if self.scheme is Scheme.THREE_CLASS:
            return feature_3class(block, self.registry)
        if self.scheme is Scheme.SIGNATURES:
            return feature_selectors(block, self.registry, self.table)
        return feature_group(block, self.groups, self.registry)

    def corpus(self, blocks: Iterable[BuildingBlock]) -> dict[str, FeatureAssignment]:
        return {b.block_id: self(b) for b in blocks}


def write_features(features: Mapping[str, FeatureAssignment], path: str | os.PathLike,
                   manifest: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if manifest:
            fh.write(f"# manifest: {manifest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "node_id", "scheme", "token"])
        for bid, fa in features.items():
            for node in sorted(fa.features):
                w.writerow([bid, node, fa.scheme.value, fa.features[node]])


def read_features(path: str | os.PathLike) -> dict[str, FeatureAssignment]:
    rows: dict[str, tuple[str, dict[int, int]]] = {}
    for row in csv.DictReader(data_lines(path)):
        scheme, feats = rows.setdefault(row["block_id"], (row["scheme"], {}))
        feats[int(row["node_id"])] = int(row["token"])
    return {bid: FeatureAssignment(Scheme(s), f) for bid, (s, f) in rows.items()}


def write_groups(groups: SignatureGroups, path: str | os.PathLike, manifest: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if manifest:
            fh.write(f"# manifest: {manifest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fingerprint", "group_id"])
        for fp, gid in groups.groups.items():
            w.writerow([fp, gid])
