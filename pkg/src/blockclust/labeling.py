"""Target labels: root protocol and financial functionality category (FFC)."""

from __future__ import annotations

import csv
import json
import os
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Optional, Sequence

from .artifacts import data_lines
from .errors import UnlabeledRoot
from .model import FFC_CATEGORIES, BuildingBlock, ContractRegistry, LabelSet

OTHERS = "Others"


@dataclass(frozen=True)
class Clause:
    required: tuple[str, ...]
    forbidden: tuple[str, ...] = ()

    def matches(self, name: str) -> bool:
        return all(t in name for t in self.required) and not any(t in name for t in self.forbidden)


@dataclass(frozen=True)
class FfcRule:
    category: str
    clauses: tuple[Clause, ...]
    order: int

    def __post_init__(self):
        if self.category not in FFC_CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.category != OTHERS and not self.clauses:
            raise ValueError(f"{self.category} needs at least one clause")


def load_rules(path: Optional[str | os.PathLike] = None) -> tuple[FfcRule, ...]:
    """Read a rules file; the bundled keyword table when ``path`` is None."""
    if path is None:
        text = resources.files("blockclust").joinpath("data/ffc_rules.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    rules = [
        FfcRule(
            r["category"],
            tuple(Clause(tuple(c["and"]), tuple(c.get("not", ()))) for c in r["clauses"]),
            int(r["order"]),
        )
        for r in json.loads(text)["rules"]
    ]
    return tuple(sorted(rules, key=lambda r: r.order))


@lru_cache(maxsize=1)
def default_rules() -> tuple[FfcRule, ...]:
    return load_rules()


def ffc_label(root_method: str, rules: Optional[Sequence[FfcRule]] = None) -> str:
    """First category (in rule order) with a clause matching the lowercased name."""
    name = root_method.lower()
    for rule in rules if rules is not None else default_rules():
        if any(c.matches(name) for c in rule.clauses):
            return rule.category
    return OTHERS


def protocol_label(block: BuildingBlock, registry: ContractRegistry) -> str:
    info = registry.get(block.root_address)
    if info is None or not info.protocol:
        raise UnlabeledRoot(f"root {block.root_address} of {block.block_id} has no protocol")
    return info.protocol


@dataclass
class LabelReport:
    """Per-label block counts before and after corpus filtering."""

    protocol: dict[str, tuple[int, int]] = field(default_factory=dict)
    ffc: dict[str, tuple[int, int]] = field(default_factory=dict)
    unlabeled_roots: int = 0
    ffc_excluded: int = 0

    def to_dict(self) -> dict:
        def table(d):
            return {k: {"count": a, "af": b} for k, (a, b) in d.items()}

        return {
            "protocol": table(self.protocol),
            "ffc": table(self.ffc),
            "unlabeled_roots": self.unlabeled_roots,
            "ffc_excluded": self.ffc_excluded,
        }


def _protocol_counts(blocks: Iterable[BuildingBlock], registry: ContractRegistry) -> Counter:
    c = Counter()
    for b in blocks:
        info = registry.get(b.root_address)
        if info is not None and info.protocol:
            c[info.protocol] += 1
    return c


def build_label_sets(
    corpus: Sequence[BuildingBlock],
    registry: ContractRegistry,
    unfiltered: Optional[Sequence[BuildingBlock]] = None,
    rules: Optional[Sequence[FfcRule]] = None,
) -> tuple[LabelSet, LabelSet, LabelReport]:
    """Protocol and FFC label sets for a filtered corpus.

    ``unfiltered`` (the corpus before dropping single-node blocks) feeds the
    "count" column of the report; without it both columns come from
    ``corpus``.
    """
    protocol, ffc, excluded = {}, {}, set()
    unlabeled = 0
    for b in corpus:
        try:
            protocol[b.block_id] = protocol_label(b, registry)
        except UnlabeledRoot:
            unlabeled += 1
        cat = ffc_label(b.root_method, rules)
        ffc[b.block_id] = cat
        if cat == OTHERS:
            excluded.add(b.block_id)

    before = unfiltered if unfiltered is not None else corpus
    p_before, p_after = _protocol_counts(before, registry), Counter(protocol.values())
    f_before = Counter(ffc_label(b.root_method, rules) for b in before)
    f_after = Counter(ffc.values())
    report = LabelReport(
        protocol={k: (p_before[k], p_after[k]) for k in sorted(set(p_before) | set(p_after), key=lambda k: (-p_before[k], k))},
        ffc={k: (f_before[k], f_after[k]) for k in FFC_CATEGORIES if f_before[k] or f_after[k]},
        unlabeled_roots=unlabeled,
        ffc_excluded=len(excluded),
    )
    return LabelSet("protocol", protocol), LabelSet("ffc", ffc, frozenset(excluded)), report


def write_labels(protocol: LabelSet, ffc: LabelSet, path: str | os.PathLike, manifest: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if manifest:
            fh.write(f"# manifest: {manifest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "protocol", "ffc", "excluded_flag"])
        for bid in sorted(set(protocol.labels) | set(ffc.labels)):
            w.writerow([bid, protocol.labels.get(bid, ""), ffc.labels.get(bid, ""), int(bid in ffc.excluded)])


def read_labels(path: str | os.PathLike) -> tuple[LabelSet, LabelSet]:
    protocol, ffc, excluded = {}, {}, set()
    for row in csv.DictReader(data_lines(path)):
        bid = row["block_id"]
        if row["protocol"]:
            protocol[bid] = row["protocol"]
        if row["ffc"]:
            ffc[bid] = row["ffc"]
        if row["excluded_flag"] == "1":
            excluded.add(bid)
    return LabelSet("protocol", protocol), LabelSet("ffc", ffc, frozenset(excluded))
