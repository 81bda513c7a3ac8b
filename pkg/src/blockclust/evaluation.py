"""Clustering quality metrics, per-cluster composition and block overlap."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .embedding import wl_document
from .errors import EmptyEvaluationSet, SchemeMismatch
from .model import (
    BuildingBlock,
    ClusterAssignment,
    ContractRegistry,
    FeatureAssignment,
    LabelSet,
    Metrics,
)


@dataclass(frozen=True)
class Contingency:
    labels: tuple[str, ...]
    clusters: tuple[int, ...]
    table: np.ndarray  # counts, shape (len(labels), len(clusters))

    @property
    def total(self) -> int:
        return int(self.table.sum())

    @property
    def label_totals(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def cluster_totals(self) -> np.ndarray:
        return self.table.sum(axis=0)


def evaluation_pairs(assignment: ClusterAssignment, labels: LabelSet) -> list[tuple[str, int]]:
    """(label, cluster) for every block that is both clustered and evaluated."""
    clusters = assignment.assignments
    return [(lab, clusters[bid]) for bid, lab in sorted(labels.evaluated().items()) if bid in clusters]


def contingency(pairs) -> Contingency:
    pairs = list(pairs)
    labs = tuple(sorted({l for l, _ in pairs}))
    clus = tuple(sorted({k for _, k in pairs}))
    li = {l: i for i, l in enumerate(labs)}
    ki = {k: i for i, k in enumerate(clus)}
    table = np.zeros((len(labs), len(clus)), dtype=np.int64)
    for l, k in pairs:
        table[li[l], ki[k]] += 1
    return Contingency(labs, clus, table)


def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def _conditional_entropy(table: np.ndarray) -> float:
    """H(rows | columns) in nats."""
    n = table.sum()
    col = table.sum(axis=0)
    nz = np.nonzero(table)
    cells = table[nz].astype(np.float64)
    return float(-(cells / n * np.log(cells / col[nz[1]])).sum())


def scores(ct: Contingency) -> Metrics:
    n = ct.total
    if n == 0:
        raise EmptyEvaluationSet("nothing to evaluate")
    t = ct.table
    h_l, h_k = _entropy(ct.label_totals), _entropy(ct.cluster_totals)
    h = 1.0 if h_l == 0 else 1.0 - _conditional_entropy(t) / h_l
    c = 1.0 if h_k == 0 else 1.0 - _conditional_entropy(t.T) / h_k
    h, c = min(max(h, 0.0), 1.0), min(max(c, 0.0), 1.0)
    v = 0.0 if h + c == 0 else 2 * h * c / (h + c)
    purity = float(t.max(axis=0).sum()) / n
    return Metrics(h, c, v, purity)


def metrics(assignment: ClusterAssignment, labels: LabelSet) -> Metrics:
    """Homogeneity, completeness, V-measure and purity of ``assignment``.

    Blocks flagged as excluded in ``labels`` are dropped before the
    contingency table is built.
    """
    pairs = evaluation_pairs(assignment, labels)
    if not pairs:
        raise EmptyEvaluationSet(f"no clustered block carries an evaluated {labels.kind} label")
    return scores(contingency(pairs))


@dataclass(frozen=True)
class ClusterSummary:
    cluster: int
    size: int
    majority: str
    fraction: float
    top: tuple[tuple[str, int], ...]  # up to three (label, count), most common first


def cluster_report(assignment: ClusterAssignment, labels: LabelSet) -> list[ClusterSummary]:
    members: dict[int, Counter] = {}
    for lab, k in evaluation_pairs(assignment, labels):
        members.setdefault(k, Counter())[lab] += 1
    out = []
    for k in sorted(members):
        counts = members[k]
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        size = sum(counts.values())
        out.append(ClusterSummary(k, size, ranked[0][0], ranked[0][1] / size, tuple(ranked[:3])))
    return out


def multiset_jaccard(a: Mapping, b: Mapping) -> float:
    keys = set(a) | set(b)
    union = sum(max(a.get(w, 0), b.get(w, 0)) for w in keys)
    if union == 0:
        return 1.0
    return sum(min(a.get(w, 0), b.get(w, 0)) for w in keys) / union


def _incoming(block: BuildingBlock, node: int) -> str:
    if node == 0:
        return block.root_token
    edge = next(e for e in block.edges if e.child == node)
    return edge.method


def _embeds(big: BuildingBlock, fb: FeatureAssignment, u: int,
            small: BuildingBlock, fs: FeatureAssignment, w: int) -> bool:
    """Can the subtree of ``w`` be mapped into ``u`` keeping order, methods and features?"""
    if fb.features[u] != fs.features[w]:
        return False
    big_kids = big.children[u]
    pos = 0
    for sk in small.children[w]:
        while pos < len(big_kids):
            bk = big_kids[pos]
            pos += 1
            if bk.method == sk.method and _embeds(big, fb, bk.child, small, fs, sk.child):
                break
        else:
            return False
    return True


def contains(big: BuildingBlock, fb: FeatureAssignment, small: BuildingBlock, fs: FeatureAssignment,
             registry: Optional[ContractRegistry] = None) -> bool:
    """True when ``small`` appears inside ``big`` rooted at some calling node.

    The match keeps parent/child links, sibling order, edge methods and node
    features; ``big`` may have extra calls around it. With a registry, only
    protocol-labeled nodes (plus ``big``'s own root) may anchor the match.
    """
    target = small.root_token
    for node, addr in big.nodes:
        if not big.children[node]:
            continue
        if registry is not None and node != 0:
            info = registry.get(addr)
            if info is None or not info.protocol:
                continue
        if _incoming(big, node) == target and _embeds(big, fb, node, small, fs, 0):
            return True
    return False


@dataclass(frozen=True)
class Overlap:
    jaccard: float
    first_contains_second: bool
    second_contains_first: bool

    @property
    def contains(self) -> bool:
        return self.first_contains_second or self.second_contains_first


def overlap(b1: BuildingBlock, f1: FeatureAssignment, b2: BuildingBlock, f2: FeatureAssignment,
            d: int = 2, registry: Optional[ContractRegistry] = None) -> Overlap:
    if f1.scheme != f2.scheme:
        raise SchemeMismatch(f"{f1.scheme.value} vs {f2.scheme.value}")
    w1 = Counter(wl_document(b1, f1, d).words)
    w2 = Counter(wl_document(b2, f2, d).words)
    return Overlap(
        multiset_jaccard(w1, w2),
        contains(b1, f1, b2, f2, registry),
        contains(b2, f2, b1, f1, registry),
    )

