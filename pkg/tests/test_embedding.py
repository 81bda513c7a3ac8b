import hashlib
import random
import struct
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockclust.errors import EmptyVocabulary, InvalidConfig
from blockclust.embedding import (
    DbowTrainer,
    TrainConfig,
    Vocabulary,
    WlDocument,
    dbow_grads,
    dbow_loss,
    embed_corpus,
    read_embeddings,
    train_embeddings,
    wl_document,
    write_embeddings,
)
from blockclust.featurization import feature_none
from blockclust.model import FeatureAssignment, Scheme

from helpers import block_from_tree, random_tree, tree_size

A, B = 5, 7


def relabel(own, neighbours):
    """WL relabeling written out independently: blake2b over big-endian int64s, top 63 bits."""
    payload = b"".join(struct.pack(">q", x) for x in [own, *sorted(neighbours)])
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big") >> 1


def _path():
    return block_from_tree(("r", (("a", (("b", ()),)),)))


def test_three_node_path_expansion():
    block = _path()
    feats = FeatureAssignment(Scheme.THREE_CLASS, {0: A, 1: B, 2: A})
    doc = wl_document(block, feats, d=1)
    end = relabel(A, [B])
    mid = relabel(B, [A, A])
    assert doc.words == (A, B, A, end, mid, end)
    assert end != mid


def test_depth_zero_is_feature_multiset():
    block = block_from_tree(("r", (("a", ()), ("b", (("c", ()),)))))
    feats = feature_none(block)
    assert Counter(wl_document(block, feats, 0).words) == Counter(feats.features.values())


def _shuffle_siblings(tree, rng):
    kids = [_shuffle_siblings(c, rng) for c in tree[1]]
    rng.shuffle(kids)
    return (tree[0], tuple(kids))


@settings(max_examples=80)
@given(st.randoms(use_true_random=False), st.integers(0, 10), st.integers(0, 2))
def test_isomorphic_blocks_share_documents(rnd, n_edges, d):
    tree = random_tree(rnd, n_edges, "ab")
    n = tree_size(tree)
    b1 = block_from_tree(tree)
    b2 = block_from_tree(tree, rnd.sample(range(100, 200), n))
    f1, f2 = feature_none(b1), feature_none(b2)
    assert wl_document(b1, f1, d).words == wl_document(b2, f2, d).words
    assert len(wl_document(b1, f1, d).words) == (d + 1) * n
    b3 = block_from_tree(_shuffle_siblings(tree, rnd))
    assert Counter(wl_document(b3, feature_none(b3), d).words) == Counter(wl_document(b1, f1, d).words)


def _finite_difference(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = f()
        x[idx] = old - eps
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("k", [0, 5])
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(k, seed):
    rng = np.random.default_rng(seed)
    mu, vocab = 4, 9
    v = rng.normal(size=mu)
    U = rng.normal(size=(vocab, mu))
    pos = rng.integers(0, vocab, size=6)
    neg = rng.integers(0, vocab, size=(6, k))
    grad_v, rows, grad_rows = dbow_grads(v, U, pos, neg)
    dense_u = np.zeros_like(U)
    np.add.at(dense_u, rows, grad_rows)
    assert _rel_err(grad_v, _finite_difference(lambda: dbow_loss(v, U, pos, neg), v)) < 1e-4
    assert _rel_err(dense_u, _finite_difference(lambda: dbow_loss(v, U, pos, neg), U)) < 1e-4


@pytest.mark.parametrize("k", [0, 3])
def test_step_is_a_gradient_step_per_word(k):
    docs = [WlDocument("a", (1, 2, 3)), WlDocument("b", (2, 3, 4))]
    trainer = DbowTrainer(docs, TrainConfig(dim=4, epochs=1, negative=k, seed=3))
    rng = np.random.default_rng(0)
    trainer.word_vecs[:] = rng.normal(size=trainer.word_vecs.shape)
    pos = trainer.encoded[0][:1]
    neg = trainer.sample_negatives(1)
    v0, U0 = trainer.doc_vecs[0].copy(), trainer.word_vecs.copy()
    other = trainer.doc_vecs[1].copy()
    lr = 0.05
    grad_v, rows, grad_rows = dbow_grads(v0, U0, pos, neg)
    trainer.step(0, pos, neg, lr)
    expected_u = U0.copy()
    np.add.at(expected_u, rows, -lr * grad_rows)
    assert np.allclose(trainer.doc_vecs[0], v0 - lr * grad_v)
    assert np.allclose(trainer.word_vecs, expected_u)
    assert np.array_equal(trainer.doc_vecs[1], other)


def test_zero_init_first_word_leaves_document_vector():
    docs = [WlDocument("a", (1, 2)), WlDocument("b", (2, 3))]
    trainer = DbowTrainer(docs, TrainConfig(dim=4, epochs=1, negative=0, seed=1))
    v0 = trainer.doc_vecs[0].copy()
    assert np.all(np.abs(v0) <= 0.5 / 4)
    trainer.step(0, trainer.encoded[0][:1], trainer.sample_negatives(1), 0.1)
    assert np.array_equal(trainer.doc_vecs[0], v0)
    assert np.allclose(trainer.word_vecs[trainer.encoded[0][0]], 0.5 * 0.1 * v0)


def _planted_docs(per_class=50, classes=3, seed=0):
    rng = random.Random(seed)
    docs, truth = [], []
    for c in range(classes):
        vocab = [1000 * (c + 1) + w for w in range(20)]
        for i in range(per_class):
            docs.append(WlDocument(f"c{c}-{i:03d}", tuple(rng.choice(vocab) for _ in range(30))))
            truth.append(c)
    return docs, np.array(truth)


def test_cosine_separation():
    docs, truth = _planted_docs()
    m = train_embeddings(docs, TrainConfig(dim=16, epochs=20, seed=0))
    x = m.vectors / np.linalg.norm(m.vectors, axis=1, keepdims=True)
    cos = x @ x.T
    same = truth[:, None] == truth[None, :]
    off = ~np.eye(len(truth), dtype=bool)
    assert cos[same & off].mean() > cos[~same].mean() + 0.2


def test_bit_identical_reruns():
    docs, _ = _planted_docs(per_class=10)
    cfg = TrainConfig(dim=8, epochs=5, seed=42)
    assert train_embeddings(docs, cfg) == train_embeddings(docs, cfg)
    other = train_embeddings(docs, TrainConfig(dim=8, epochs=5, seed=43))
    assert not np.array_equal(other.vectors, train_embeddings(docs, cfg).vectors)


@pytest.mark.parametrize("lr", [0.05, 0.25, 0.5])
def test_entries_stay_finite(lr):
    docs, _ = _planted_docs(per_class=10, seed=1)
    m = train_embeddings(docs, TrainConfig(dim=16, epochs=10, learning_rate=lr, seed=0))
    assert np.isfinite(m.vectors).all()


def test_vocabulary_and_config_errors():
    docs = [WlDocument("a", (1,)), WlDocument("b", (2,))]
    with pytest.raises(EmptyVocabulary):
        Vocabulary(docs, min_count=2)
    for bad in (dict(dim=0), dict(learning_rate=0), dict(epochs=0), dict(wl_depth=-1), dict(negative=-1)):
        with pytest.raises(InvalidConfig):
            TrainConfig(**bad)


def test_vocabulary_order_and_noise():
    vocab = Vocabulary([WlDocument("a", (3, 3, 1)), WlDocument("b", (2, 3, 1))])
    assert vocab.words == (3, 1, 2)
    cdf = vocab.noise_cdf()
    expected = np.cumsum(np.array([3, 2, 1]) ** 0.75) / (np.array([3, 2, 1]) ** 0.75).sum()
    assert np.allclose(cdf, expected) and cdf[-1] == 1.0


def test_embed_corpus_round_trip(tmp_path):
    rng = random.Random(0)
    blocks = list({b.block_id: b for b in (block_from_tree(random_tree(rng, rng.randint(1, 5), "ab"))
                                           for _ in range(12))}.values())
    feats = {b.block_id: feature_none(b) for b in blocks}
    m, vocab = embed_corpus(blocks, feats, TrainConfig(dim=6, epochs=3))
    assert m.ids == tuple(b.block_id for b in blocks)
    p = tmp_path / "e.csv"
    write_embeddings(m, p, manifest="x")
    assert read_embeddings(p) == m
