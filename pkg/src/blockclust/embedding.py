"""Whole-graph embedding of building blocks (graph2vec).

Each block becomes a document of Weisfeiler-Lehman labels; a distributed
bag-of-words paragraph-vector model with negative sampling then learns one
vector per document.
"""

from __future__ import annotations

import hashlib
import os
import struct
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .artifacts import data_lines, write_lines
from .errors import DataError, EmptyVocabulary, InvalidConfig
from .model import BuildingBlock, EmbeddingMatrix, FeatureAssignment


@dataclass(frozen=True)
class WlDocument:
    block_id: str
    words: tuple[int, ...]


def _wl_hash(own: int, neighbours: Sequence[int]) -> int:
    payload = struct.pack(f">q{len(neighbours)}q", own, *neighbours) if neighbours else struct.pack(">q", own)
    # fold to a signed 63-bit int so labels pack back into ">q"
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big") >> 1


def wl_labels(block: BuildingBlock, features: FeatureAssignment, d: int, directed: bool = False) -> list[dict[int, int]]:
    """Node labels for iterations ``0..d``; iteration 0 is the feature token."""
    if not features.covers(block):
        raise DataError(f"features do not cover every node of {block.block_id}")
    neighbours: dict[int, list[int]] = {i: [e.child for e in block.children[i]] for i, _ in block.nodes}
    if not directed:
        for child, parent in block.parent_of.items():
            neighbours[child].append(parent)
    labels = {i: int(features.features[i]) for i, _ in block.nodes}
    history = [labels]
    for _ in range(d):
        labels = {n: _wl_hash(labels[n], sorted(labels[m] for m in neighbours[n])) for n in labels}
        history.append(labels)
    return history


def wl_document(block: BuildingBlock, features: FeatureAssignment, d: int = 2, directed: bool = False) -> WlDocument:
    words = []
    for labels in wl_labels(block, features, d, directed):
        words.extend(labels[i] for i, _ in block.nodes)
    return WlDocument(block.block_id, tuple(words))


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 128
    learning_rate: float = 0.05
    epochs: int = 100
    wl_depth: int = 2
    negative: int = 5
    min_count: int = 1
    seed: int = 0
    directed_wl: bool = False

    def __post_init__(self):
        if self.dim <= 0 or self.learning_rate <= 0 or self.epochs <= 0:
            raise InvalidConfig("dim, learning_rate and epochs must be positive")
        if self.wl_depth < 0 or self.negative < 0 or self.min_count < 1:
            raise InvalidConfig("wl_depth and negative must be >= 0, min_count >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class Vocabulary:
    """Word index ordered by descending count, then by word value."""

    def __init__(self, docs: Iterable[WlDocument], min_count: int = 1):
        counts = Counter(w for doc in docs for w in doc.words)
        kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
        if not kept:
            raise EmptyVocabulary(f"no word occurs at least {min_count} times")
        self.words = tuple(kept)
        self.counts = np.array([counts[w] for w in kept], dtype=np.float64)
        self.index = {w: i for i, w in enumerate(kept)}

    def __len__(self) -> int:
        return len(self.words)

    def encode(self, doc: WlDocument) -> np.ndarray:
        return np.array([self.index[w] for w in doc.words if w in self.index], dtype=np.int64)

    def noise_cdf(self, power: float = 0.75) -> np.ndarray:
        p = self.counts ** power
        cdf = np.cumsum(p / p.sum())
        cdf[-1] = 1.0
        return cdf


def dbow_loss(v: np.ndarray, U: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> float:
    """Negative-sampling loss of one document vector ``v``.

    ``pos`` lists the document's word ids; ``neg[i]`` holds the noise words
    drawn for ``pos[i]``. Noise draws equal to their positive word are ignored.
    """
    s_pos = U[pos] @ v
    loss = -log_expit(s_pos).sum()
    if neg.size:
        mask = neg != pos[:, None]
        s_neg = U[neg] @ v
        loss -= (log_expit(-s_neg) * mask).sum()
    return float(loss)


def dbow_grads(v: np.ndarray, U: np.ndarray, pos: np.ndarray, neg: np.ndarray):
    """Analytic gradient of :func:`dbow_loss`.

    Returns ``(grad_v, rows, grad_rows)``: the word-vector gradient is sparse,
    ``grad_rows[j]`` belongs to ``U[rows[j]]`` and rows may repeat.
    """
    g_pos = expit(U[pos] @ v) - 1.0
    rows, coef = [pos], [g_pos]
    if neg.size:
        mask = neg != pos[:, None]
        flat = neg.ravel()
        g_neg = expit(U[flat] @ v) * mask.ravel()
        rows.append(flat)
        coef.append(g_neg)
    rows = np.concatenate(rows)
    coef = np.concatenate(coef)
    grad_v = coef @ U[rows]
    return grad_v, rows, np.outer(coef, v)


class DbowTrainer:
    """Stateful single-stream trainer.

    Updates are sequential per word: for each word of the visited document the
    positive and negative terms move their word vectors and the document
    vector at once, and the next word sees the updated document vector.
    """

    def __init__(self, docs: Sequence[WlDocument], cfg: TrainConfig, vocab: Optional[Vocabulary] = None):
        if len(docs) < 2:
            raise DataError("need at least two documents to train embeddings")
        self.cfg = cfg
        self.docs = list(docs)
        self.vocab = vocab or Vocabulary(self.docs, cfg.min_count)
        self.encoded = [self.vocab.encode(d) for d in self.docs]
        self.rng = np.random.default_rng(cfg.seed)
        mu = cfg.dim
        self.doc_vecs = (self.rng.random((len(self.docs), mu)) - 0.5) / mu
        self.word_vecs = np.zeros((len(self.vocab), mu))
        self.cdf = self.vocab.noise_cdf()
        self._targets = np.zeros(cfg.negative + 1)
        self._targets[0] = 1.0

    def sample_negatives(self, n: int) -> np.ndarray:
        k = self.cfg.negative
        if k == 0:
            return np.zeros((n, 0), dtype=np.int64)
        idx = np.searchsorted(self.cdf, self.rng.random(n * k), side="right")
        return np.minimum(idx, len(self.cdf) - 1).reshape(n, k)

    def step(self, g: int, pos: np.ndarray, neg: np.ndarray, lr: float) -> None:
        """One pass over document ``g``; word ``i`` equals a step of ``-lr`` times
        ``dbow_grads`` restricted to ``pos[i:i+1]``, ``neg[i:i+1]``."""
        v = self.doc_vecs[g]
        U = self.word_vecs
        rows_all = np.concatenate([pos[:, None], neg], axis=1)
        keep_all = rows_all != pos[:, None]
        keep_all[:, 0] = True
        srt = np.sort(rows_all, axis=1)
        has_dup = (srt[:, 1:] == srt[:, :-1]).any(axis=1)
        targets = self._targets
        for rows, keep, dup in zip(rows_all, keep_all, has_dup):
            t = targets
            if not keep.all():
                rows, t = rows[keep], targets[keep]
            u = U[rows]
            coef = (t - expit(u @ v)) * lr
            if dup:
                np.add.at(U, rows, np.outer(coef, v))
            else:
                U[rows] = u + np.outer(coef, v)
            v += coef @ u

    def train(self) -> EmbeddingMatrix:
        cfg = self.cfg
        n = len(self.docs)
        total = cfg.epochs * n
        lr_end = cfg.learning_rate / 100.0
        t = 0
        for _ in range(cfg.epochs):
            for g in self.rng.permutation(n):
                lr = cfg.learning_rate + (lr_end - cfg.learning_rate) * t / max(total - 1, 1)
                t += 1
                pos = self.encoded[g]
                if pos.size == 0:
                    continue
                self.step(int(g), pos, self.sample_negatives(pos.size), lr)
        return EmbeddingMatrix(tuple(d.block_id for d in self.docs), self.doc_vecs.copy())


def train_embeddings(docs: Sequence[WlDocument], cfg: TrainConfig = TrainConfig()) -> EmbeddingMatrix:
    return DbowTrainer(docs, cfg).train()


def embed_corpus(
    corpus: Sequence[BuildingBlock],
    features: dict[str, FeatureAssignment],
    cfg: TrainConfig = TrainConfig(),
) -> tuple[EmbeddingMatrix, Vocabulary]:
    docs = [wl_document(b, features[b.block_id], cfg.wl_depth, cfg.directed_wl) for b in corpus]
    trainer = DbowTrainer(docs, cfg)
    return trainer.train(), trainer.vocab


def write_embeddings(matrix: EmbeddingMatrix, path: str | os.PathLike, manifest: Optional[str] = None) -> None:
    header = "block_id," + ",".join(f"e{i}" for i in range(matrix.dim))
    lines = (bid + "," + ",".join(repr(float(x)) for x in row) for bid, row in zip(matrix.ids, matrix.vectors))
    write_lines(path, [header, *lines], manifest)


def read_embeddings(path: str | os.PathLike) -> EmbeddingMatrix:
    lines = list(data_lines(path))
    ids, rows = [], []
    for line in lines[1:]:
        bid, *vals = line.split(",")
        ids.append(bid)
        rows.append([float(x) for x in vals])
    dim = len(lines[0].split(",")) - 1
    return EmbeddingMatrix(tuple(ids), np.array(rows, dtype=np.float64).reshape(len(ids), dim))


def write_vocab(vocab: Vocabulary, path: str | os.PathLike, manifest: Optional[str] = None) -> None:
    write_lines(path, (f"{w}\t{int(c)}" for w, c in zip(vocab.words, vocab.counts)), manifest)
