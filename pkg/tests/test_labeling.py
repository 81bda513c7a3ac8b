import json
import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from blockclust.errors import UnlabeledRoot
from blockclust.evaluation import evaluation_pairs
from blockclust.labeling import (
    OTHERS,
    Clause,
    FfcRule,
    build_label_sets,
    default_rules,
    ffc_label,
    load_rules,
    protocol_label,
    read_labels,
    write_labels,
)
from blockclust.model import FFC_CATEGORIES, ClusterAssignment

from helpers import block_from_tree, info, registry, trace
from labeler_cases import CASES


@pytest.mark.parametrize("name,category", CASES)
def test_fixture(name, category):
    assert ffc_label(name) == category


def test_fixture_touches_every_clause():
    used = set()
    for name, _ in CASES:
        low = name.lower()
        for rule in default_rules():
            for k, c in enumerate(rule.clauses):
                if c.matches(low):
                    used.add((rule.category, k))
    every = {(r.category, k) for r in default_rules() for k in range(len(r.clauses))}
    assert every <= used
    assert len(CASES) >= 25


def test_rules_follow_category_order():
    assert [r.category for r in default_rules()] == list(FFC_CATEGORIES)


names = st.text(alphabet="abcdefgiklnorstuwxyzABKLNSTU", max_size=16)


@given(names)
def test_one_category_and_case_insensitive(name):
    cat = ffc_label(name)
    assert cat in FFC_CATEGORIES
    assert ffc_label(name.upper()) == cat == ffc_label(name.lower())


def _clause(category, required):
    rule = next(r for r in default_rules() if r.category == category)
    return next(c for c in rule.clauses if c.required == required)


GUARDED = {"unstake": ("stake",), "unstaking": ("staking",), "unlock": ("lock",)}


@given(names, names, st.sampled_from(sorted(GUARDED)))
def test_negated_keywords_block_lock_capital_clauses(pre, post, word):
    assert not _clause("Lock Capital", GUARDED[word]).matches((pre + word + post).lower())
    assert ffc_label(word) != "Lock Capital"


@given(names, names)
def test_block_never_triggers_lock(pre, post):
    assert not _clause("Lock Capital", ("lock",)).matches((pre + "block" + post).lower())


def test_rule_validation(tmp_path):
    with pytest.raises(ValueError):
        FfcRule("Swap", (), 1)
    with pytest.raises(ValueError):
        FfcRule("Gambling", (Clause(("bet",)),), 1)
    p = tmp_path / "rules.json"
    p.write_text(json.dumps({"rules": [
        {"order": 2, "category": "Swap", "clauses": [{"and": ["zap"]}]},
        {"order": 1, "category": "Borrow", "clauses": [{"and": ["zap", "loan"]}]},
    ]}))
    rules = load_rules(p)
    assert ffc_label("zapLoan", rules) == "Borrow"
    assert ffc_label("zap", rules) == "Swap"
    assert ffc_label("swap", rules) == OTHERS


def test_protocol_label():
    reg = registry(info(1, "Uniswap"), info(2), info(3, "P2"))
    assert protocol_label(block_from_tree(("swap", (("a", ()),)), [1, 2]), reg) == "Uniswap"
    with pytest.raises(UnlabeledRoot):
        protocol_label(block_from_tree(("swap", (("a", ()),)), [9, 2]), reg)


def test_nested_root_takes_inner_protocol():
    from blockclust.extraction import blocks_of

    reg = registry(info(1), info(2, "P1"), info(3, "P2"), info(4))
    inner = [b for b in blocks_of(trace([None, 0, 1, 2], [1, 2, 3, 4]), reg) if b.n_nodes == 2]
    assert protocol_label(inner[0], reg) == "P2"


def _corpus(methods, reg_protocol="P"):
    reg = registry(*(info(i + 1, reg_protocol) for i in range(len(methods))), info(999))
    blocks = [block_from_tree((m, (("x", ()),)), [i + 1, 999]) for i, m in enumerate(methods)]
    return blocks, reg


def test_all_swap_corpus():
    blocks, reg = _corpus(["swap"] * 3 + ["swapExact"] * 2)
    _, ffc, report = build_label_sets(blocks, reg)
    assert set(ffc.labels.values()) == {"Swap"}
    assert not ffc.excluded and report.ffc_excluded == 0


def test_others_are_excluded_from_contingency():
    blocks, reg = _corpus(["foo", "bar", "baz"])
    protocol, ffc, report = build_label_sets(blocks, reg)
    assert ffc.excluded == frozenset(ffc.labels)
    assert report.ffc_excluded == 3
    assign = ClusterAssignment(1.0, {b.block_id: 0 for b in blocks})
    assert evaluation_pairs(assign, ffc) == []
    assert len(evaluation_pairs(assign, protocol)) == 3


def test_report_counts_match_recount(tmp_path):
    rng = random.Random(2)
    methods = [rng.choice(["swap", "deposit", "foo", "vote", "borrow"]) for _ in range(10)]
    reg = registry(*(info(i + 1, rng.choice(["A", "B", None])) for i in range(10)), info(999))
    blocks = [block_from_tree((f"{m}{i}", (("x", ()),)), [i + 1, 999]) for i, m in enumerate(methods)]
    protocol, ffc, report = build_label_sets(blocks, reg)
    prot = Counter(reg[b.root_address].protocol for b in blocks if reg[b.root_address].protocol)
    assert {k: v[1] for k, v in report.protocol.items()} == dict(prot)
    assert {k: v[1] for k, v in report.ffc.items()} == dict(Counter(ffc_label(m) for m in methods))
    assert report.unlabeled_roots == sum(1 for b in blocks if not reg[b.root_address].protocol)
    p = tmp_path / "labels.csv"
    write_labels(protocol, ffc, p, manifest="x")
    assert read_labels(p) == (protocol, ffc)
