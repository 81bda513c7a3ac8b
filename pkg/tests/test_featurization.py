import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockclust.errors import EmptyRegistry
from blockclust.featurization import (
    UNKNOWN_GROUP,
    UNKNOWN_SIGNATURE,
    Featurizer,
    SignatureTable,
    build_signature_groups,
    feature_3class,
    feature_group,
    feature_none,
    feature_selectors,
    fingerprint,
    jaccard_distances,
    read_features,
    write_features,
)
from blockclust.model import ContractClass as CC, Selector

from helpers import block_from_parents, block_from_tree, info, random_parents, registry
from oracles import jaccard_distance, naive_cut, naive_ward


def s(n: int) -> Selector:
    return Selector(n.to_bytes(4, "big"))


def test_degree_examples():
    star = block_from_tree(("r", (("a", ()), ("b", ()))))
    assert dict(feature_none(star).features) == {0: 2, 1: 1, 2: 1}
    path = block_from_tree(("r", (("a", (("b", ()),)),)))
    assert [feature_none(path).features[i] for i in range(3)] == [1, 2, 1]


@settings(max_examples=100)
@given(st.randoms(use_true_random=False), st.integers(1, 15))
def test_degree_matches_adjacency(rnd, n):
    parents = random_parents(rnd, n)
    b = block_from_parents(parents, ["m"] * len(parents), list(range(1, len(parents) + 1)))
    adj = {i: set() for i in range(len(parents))}
    for i, p in enumerate(parents):
        if p is not None:
            adj[i].add(p)
            adj[p].add(i)
    assert dict(feature_none(b).features) == {i: len(v) for i, v in adj.items()}


def test_three_class():
    b = block_from_tree(("r", (("a", ()), ("b", ()), ("c", ()))), [1, 2, 3, 4])
    reg = registry(info(1, "P", CC.OTHER), info(2, None, CC.ASSET), info(3, None, CC.FACTORY_DEPLOYED))
    f = feature_3class(b, reg).features
    assert f[1] == 1 and f[2] == 0
    assert f[3] == 2  # unregistered
    assert len(set(f.values())) == 3


def test_selector_tokens():
    b = block_from_tree(("r", (("a", ()), ("b", ()), ("c", ()), ("d", ()))), [1, 2, 3, 4, 5])
    reg = registry(
        info(1, "P", selectors=[s(1)]),
        info(2, selectors=[s(1), s(2)]),
        info(3, selectors=[s(2), s(1)]),
        info(4),
    )
    f = feature_selectors(b, reg).features
    assert f[1] == f[2]
    assert f[0] != f[1]
    assert f[3] == f[4] == UNKNOWN_SIGNATURE


def test_selector_dedup_oracle():
    rng = random.Random(1)
    sets = [frozenset(s(rng.randint(0, 6)) for _ in range(rng.randint(1, 3))) for _ in range(100)]
    reg = registry(*(info(i + 1, selectors=x) for i, x in enumerate(sets)))
    table = SignatureTable(reg)
    tokens = {table.token(x) for x in sets}
    assert len(tokens) == len(set(sets)) == len(table)
    assert UNKNOWN_SIGNATURE not in tokens


def test_jaccard_examples():
    a, b, c, d = s(1), s(2), s(3), s(4)
    m = jaccard_distances([frozenset({a, b}), frozenset({c}), frozenset({a, b, c}), frozenset({b, c, d})])
    assert m[0, 1] == 1.0
    assert m[2, 3] == pytest.approx(0.5)
    assert np.allclose(m, m.T) and np.all(np.diag(m) == 0)


FIVE = [{1, 2, 3}, {2, 3, 4}, {1, 2}, {7, 8}, {7, 8, 9, 10}]


def _five_registry():
    return registry(*(info(i + 1, selectors=[s(x) for x in xs]) for i, xs in enumerate(FIVE)))


def test_groups_match_lance_williams_oracle():
    reg = _five_registry()
    fps = sorted(fingerprint(reg[k].selectors) for k in reg)
    by_fp = {fingerprint(i.selectors): {x.hex for x in i.selectors} for i in reg.values()}
    n = len(fps)
    dist = np.array([[jaccard_distance(by_fp[fps[i]], by_fp[fps[j]]) for j in range(n)] for i in range(n)])
    merges = naive_ward(dist)
    heights = sorted(h for _, _, h in merges)
    groups0 = build_signature_groups(reg, 1.5)
    assert np.allclose(sorted(groups0.heights), heights)
    cuts = [heights[0] / 2] + [(a + b) / 2 for a, b in zip(heights, heights[1:])] + [heights[-1] + 1, 1.5]
    for t in cuts:
        groups = build_signature_groups(reg, t)
        expected = naive_cut(merges, n, t)
        got = {}
        for k, fp in enumerate(fps):
            got.setdefault(groups.groups[fp], set()).add(k)
        assert {frozenset(v) for v in got.values()} == expected
        assert set(groups.groups.values()) == set(range(groups.n_groups))


def test_threshold_extremes():
    reg = _five_registry()
    assert build_signature_groups(reg, 1e-9).n_groups == len(FIVE)
    top = max(build_signature_groups(reg).heights)
    assert build_signature_groups(reg, top + 1e-9).n_groups == 1


def test_near_identical_sets_share_group():
    big = list(range(10))
    reg = registry(
        info(1, selectors=[s(x) for x in big]),
        info(2, selectors=[s(x) for x in big[:9]]),
        info(3, selectors=[s(100), s(101)]),
    )
    groups = build_signature_groups(reg, 0.5)
    b = block_from_tree(("r", (("a", ()), ("b", ()), ("c", ()))), [1, 2, 3, 4])
    f = feature_group(b, groups, reg).features
    assert f[0] == f[1] != f[2]
    assert f[3] == UNKNOWN_GROUP  # no registry entry
    assert groups.token(reg[info(2).address].selectors) == f[1]


def test_empty_registry():
    with pytest.raises(EmptyRegistry):
        build_signature_groups(registry(info(1), info(2)))


def test_single_set_is_one_group():
    g = build_signature_groups(registry(info(1, selectors=[s(1)]), info(2, selectors=[s(1)])))
    assert g.n_groups == 1


def _distinct(featurizer, blocks):
    return len({t for fa in featurizer.corpus(blocks).values() for t in fa.features.values()})


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_grouping_never_finer_than_signatures(rnd):
    reg = registry(*(
        info(a, "P" if a < 4 else None, rnd.choice(list(CC)),
             [s(rnd.randint(0, 8)) for _ in range(rnd.randint(0, 4))])
        for a in range(1, 16)
    ))
    if not any(i.selectors for i in reg.values()):
        return
    blocks = []
    for _ in range(10):
        parents = random_parents(rnd, rnd.randint(1, 6))
        blocks.append(block_from_parents(parents, ["m"] * len(parents), [rnd.randint(1, 15) for _ in parents]))
    blocks = list({b.block_id: b for b in blocks}.values())
    assert _distinct(Featurizer("3class", reg), blocks) <= 3
    assert _distinct(Featurizer("siggroup", reg), blocks) <= _distinct(Featurizer("sig", reg), blocks)


def test_granularity_chain_on_synthetic_corpus():
    from blockclust.extraction import extract_corpus, filter_corpus
    from blockclust.synthgen import SynthSpec, synthesize

    sc = synthesize(SynthSpec(n_protocols=4, archetypes_per_protocol=2, blocks_per_archetype=10))
    corpus = filter_corpus(extract_corpus(sc.traces, sc.registry), 10_000)
    counts = [_distinct(Featurizer(name, sc.registry), corpus) for name in ("3class", "siggroup", "sig")]
    assert counts[0] <= counts[1] <= counts[2]


def test_features_are_pure_and_round_trip(tmp_path):
    reg = _five_registry()
    blocks = [block_from_tree(("r", (("a", ()), ("b", (("c", ()),)))), [1, 2, 3, 4]),
              block_from_tree(("q", (("a", ()),)), [5, 1])]
    for name in ("none", "3class", "sig", "siggroup"):
        first = Featurizer(name, reg).corpus(blocks)
        assert first == Featurizer(name, dict(reg)).corpus(blocks)
        p = tmp_path / f"{name}.csv"
        write_features(first, p, manifest="m")
        assert read_features(p) == first
