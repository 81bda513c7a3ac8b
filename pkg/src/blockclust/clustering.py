"""Ward agglomerative clustering with a strict distance-threshold cut.

Heights follow the usual Ward convention: the Lance-Williams update runs on
squared dissimilarities and heights are reported as their square root, so
two singletons merge at their plain distance.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import pdist

from .artifacts import data_lines, write_lines
from .errors import EmptyEvaluationSet, EmptyMatrix, InvalidDelta
from .evaluation import metrics
from .model import ClusterAssignment, ClusteringRun, EmbeddingMatrix, LabelSet, Metrics


def ward_linkage(condensed: np.ndarray) -> np.ndarray:
    """Ward dendrogram over a condensed dissimilarity vector (scipy layout)."""
    return linkage(np.asarray(condensed, dtype=np.float64), method="ward")


def cut_tree(Z: np.ndarray, n: int, delta: float) -> np.ndarray:
    """Component id per leaf after performing every merge with height < ``delta``.

    Ids are arbitrary but consistent; callers renumber them.
    """
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rep = list(range(n)) + [0] * max(n - 1, 0)
    for row, (a, b, h, _) in enumerate(Z):
        a, b = int(a), int(b)
        rep[n + row] = rep[a]
        if h < delta:
            ra, rb = find(rep[a]), find(rep[b])
            if ra != rb:
                parent[rb] = ra
    return np.array([find(i) for i in range(n)], dtype=np.int64)


def renumber(ids: Sequence[str], components: np.ndarray) -> dict[str, int]:
    """Contiguous cluster ids, ordered by each cluster's smallest member id."""
    smallest: dict[int, str] = {}
    for bid, comp in zip(ids, components):
        comp = int(comp)
        if comp not in smallest or bid < smallest[comp]:
            smallest[comp] = bid
    order = {comp: k for k, comp in enumerate(sorted(smallest, key=smallest.__getitem__))}
    return {bid: order[int(comp)] for bid, comp in zip(ids, components)}


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


class Dendrogram:
    """Ward tree over embedding rows; cut it at any number of thresholds."""

    def __init__(self, matrix: EmbeddingMatrix, normalize: bool = True):
        if len(matrix) == 0:
            raise EmptyMatrix("no embedding rows to cluster")
        x = matrix.vectors
        if normalize:
            x = _unit_rows(x)
        self.ids = matrix.ids
        self.normalize = normalize
        n = len(self.ids)
        self.Z = ward_linkage(pdist(x)) if n > 1 else np.zeros((0, 4))

    @property
    def heights(self) -> np.ndarray:
        return self.Z[:, 2]

    def cut(self, delta: float) -> ClusterAssignment:
        if not delta > 0:
            raise InvalidDelta(f"delta must be positive, got {delta}")
        comps = cut_tree(self.Z, len(self.ids), delta)
        return ClusterAssignment(float(delta), renumber(self.ids, comps))


def cluster(matrix: EmbeddingMatrix, delta: float, normalize: bool = True) -> ClusterAssignment:
    if not delta > 0:
        raise InvalidDelta(f"delta must be positive, got {delta}")
    return Dendrogram(matrix, normalize).cut(delta)


def delta_grid(lo: float, hi: float, step: float) -> list[float]:
    """Inclusive grid ``lo, lo+step, ..., hi``, rounded to kill float drift."""
    if step <= 0 or hi < lo:
        raise InvalidDelta(f"bad sweep range [{lo}, {hi}] step {step}")
    n = int(round((hi - lo) / step)) + 1
    return [round(lo + i * step, 10) for i in range(n)]


@dataclass(frozen=True)
class SweepRow:
    delta: float
    n_clusters: int
    homogeneity: float
    completeness: float
    v_measure: float
    purity: float

    @property
    def metrics(self) -> Metrics:
        return Metrics(self.homogeneity, self.completeness, self.v_measure, self.purity)


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    best: ClusteringRun = field(compare=False)

    @property
    def best_delta(self) -> float:
        return self.best.delta

    @property
    def best_row(self) -> SweepRow:
        return next(r for r in self.rows if r.delta == self.best_delta)


def sweep(
    matrix: EmbeddingMatrix,
    labels: LabelSet,
    lo: float = 0.6,
    hi: float = 1.0,
    step: float = 0.01,
    normalize: bool = True,
    dendrogram: Optional[Dendrogram] = None,
) -> SweepResult:
    """Cut at every grid threshold and keep the one with the highest V-measure.

    Ties go to the smallest threshold.
    """
    if not labels.evaluated():
        raise EmptyEvaluationSet(f"no {labels.kind} labels left to evaluate")
    tree = dendrogram or Dendrogram(matrix, normalize)
    rows = []
    best: Optional[ClusteringRun] = None
    for d in delta_grid(lo, hi, step):
        assignment = tree.cut(d)
        m = metrics(assignment, labels)
        rows.append(SweepRow(d, assignment.n_clusters, *m))
        if best is None or m.v_measure > best.metrics.v_measure:
            best = ClusteringRun(assignment, m)
    return SweepResult(tuple(rows), best)


def write_clusters(assignment: ClusterAssignment, path: str | os.PathLike, manifest: Optional[str] = None) -> None:
    rows = sorted(assignment.assignments.items(), key=lambda kv: (kv[1], kv[0]))
    write_lines(path, ["block_id,cluster_id,delta", *(f"{b},{k},{assignment.delta!r}" for b, k in rows)], manifest)


def read_clusters(path: str | os.PathLike) -> ClusterAssignment:
    rows = list(csv.DictReader(data_lines(path)))
    if not rows:
        raise EmptyMatrix(f"{os.fspath(path)} holds no assignments")
    return ClusterAssignment(float(rows[0]["delta"]), {r["block_id"]: int(r["cluster_id"]) for r in rows})


SWEEP_HEADER = "delta,n_clusters,homogeneity,completeness,v_measure,purity"


def write_sweep(result: SweepResult, path: str | os.PathLike, manifest: Optional[str] = None) -> None:
    lines = [SWEEP_HEADER]
    for r in result.rows:
        lines.append(",".join(repr(x) for x in (r.delta, r.n_clusters, r.homogeneity, r.completeness,
                                               r.v_measure, r.purity)))
    write_lines(path, lines, manifest)
