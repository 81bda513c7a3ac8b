"""Exact-gradient t-SNE and static scatter export."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from html import escape
from typing import Optional, Sequence

import numpy as np

from .errors import TooFewPoints

MAX_POINTS = 20_000
_EPS = 1e-12


def _sq_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_affinities(sqdist: np.ndarray, perplexity: float, tol: float = 1e-5, steps: int = 100) -> np.ndarray:
    """Row-stochastic Gaussian affinities whose entropy matches log(perplexity).

    The precision of each row is found by bisection, all rows at once.
    """
    n = sqdist.shape[0]
    target = np.log(perplexity)
    beta = np.ones(n)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    off = ~np.eye(n, dtype=bool)
    # shift by the nearest-neighbour distance for numerical stability
    dmin = np.where(off, sqdist, np.inf).min(axis=1, keepdims=True)
    shifted = sqdist - dmin
    for _ in range(steps):
        p = np.exp(-shifted * beta[:, None]) * off
        s = p.sum(axis=1)
        p /= s[:, None]
        entropy = np.log(s) + beta * (shifted * p).sum(axis=1)
        diff = entropy - target
        if np.all(np.abs(diff) <= tol):
            break
        up = diff > 0  # too flat: sharpen
        lo = np.where(up, beta, lo)
        hi = np.where(up, hi, beta)
        beta = np.where(
            up,
            np.where(np.isinf(hi), beta * 2.0, (beta + hi) / 2.0),
            np.where(np.isinf(lo), beta / 2.0, (beta + lo) / 2.0),
        )
    return p


def joint_affinities(x: np.ndarray, perplexity: float) -> np.ndarray:
    cond = conditional_affinities(_sq_distances(x), perplexity)
    p = (cond + cond.T) / (2.0 * x.shape[0])
    return np.maximum(p, _EPS)


def kl_and_grad(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) for Student-t similarities of ``y`` and its gradient."""
    num = 1.0 / (1.0 + _sq_distances(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), _EPS)
    off = ~np.eye(p.shape[0], dtype=bool)
    kl = float((p[off] * np.log(p[off] / q[off])).sum())
    w = (p - q) * num
    grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
    return kl, grad


def _pca_init(x: np.ndarray) -> np.ndarray:
    xc = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    # fix component signs so the layout does not depend on the LAPACK build
    signs = np.sign(vt[np.arange(2), np.abs(vt[:2]).argmax(axis=1)])
    y = u[:, :2] * s[:2] * signs
    return y / np.std(y[:, 0]) * 1e-4


@dataclass
class TsneResult:
    coords: np.ndarray
    kl: list[float] = field(default_factory=list)  # one value per iteration after exaggeration
    exaggeration_iters: int = 250


def run_tsne(
    x: np.ndarray,
    perplexity: float = 30.0,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: Optional[float] = None,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    init: str = "pca",
) -> TsneResult:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 3 * perplexity:
        raise TooFewPoints(f"{n} points is fewer than 3 x perplexity ({perplexity})")
    if n > MAX_POINTS:
        raise ValueError(f"exact t-SNE is capped at {MAX_POINTS} points")
    p = joint_affinities(x, perplexity)
    if init == "pca" and x.shape[1] >= 2:
        y = _pca_init(x)
    else:
        y = np.random.default_rng(seed).normal(scale=1e-4, size=(n, 2))
    lr = learning_rate if learning_rate is not None else max(n / early_exaggeration / 4.0, 50.0)
    update = np.zeros_like(y)
    for _ in range(min(exaggeration_iters, iterations)):
        _, grad = kl_and_grad(p * early_exaggeration, y)
        update = 0.5 * update - lr * grad
        y = y + update
        y -= y.mean(axis=0)

    # second phase: momentum 0.8 from a fresh buffer, restarted whenever a step
    # would raise the objective so the KL trace never goes up
    update = np.zeros_like(y)
    kl, grad = kl_and_grad(p, y)
    kl_trace = []
    for _ in range(iterations - exaggeration_iters):
        kl_trace.append(kl)
        update = 0.8 * update - lr * grad
        step = lr
        while True:
            cand = y + update
            cand -= cand.mean(axis=0)
            kl_c, grad_c = kl_and_grad(p, cand)
            if kl_c <= kl:
                break
            update = -step * grad
            step /= 2.0
            if step < lr * 2.0 ** -30:
                update[:] = 0.0
                cand, kl_c, grad_c = y, kl, grad
                break
        y, kl, grad = cand, kl_c, grad_c
    return TsneResult(y - y.mean(axis=0), kl_trace, exaggeration_iters)


def tsne(x, perplexity: float = 30.0, iterations: int = 1000, seed: int = 0, **kw) -> np.ndarray:
    """2-d t-SNE layout of the rows of ``x`` (an array or EmbeddingMatrix)."""
    vectors = getattr(x, "vectors", x)
    return run_tsne(vectors, perplexity, iterations, seed, **kw).coords


PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
SHAPES = ("circle", "square", "triangle", "diamond")
UNLABELED = "unlabeled"


def _mark(shape: str, cx: float, cy: float, color: str, r: float = 4.0, hollow: bool = False) -> str:
    paint = f'fill="none" stroke="{color}"' if hollow else f'fill="{color}" fill-opacity="0.8"'
    if shape == "circle":
        return f'<circle class="mark" cx="{cx:.2f}" cy="{cy:.2f}" r="{r}" {paint}/>'
    if shape == "square":
        return f'<rect class="mark" x="{cx - r:.2f}" y="{cy - r:.2f}" width="{2 * r}" height="{2 * r}" {paint}/>'
    if shape == "triangle":
        pts = f"{cx:.2f},{cy - r:.2f} {cx - r:.2f},{cy + r:.2f} {cx + r:.2f},{cy + r:.2f}"
    else:
        pts = f"{cx:.2f},{cy - r:.2f} {cx + r:.2f},{cy:.2f} {cx:.2f},{cy + r:.2f} {cx - r:.2f},{cy:.2f}"
    return f'<polygon class="mark" points="{pts}" {paint}/>'


def label_styles(labels: Sequence[Optional[str]]) -> dict[str, tuple[str, str]]:
    """(colour, shape) per label; shapes cycle once the palette is used up."""
    named = sorted({l for l in labels if l})
    styles = {l: (PALETTE[k % len(PALETTE)], SHAPES[(k // len(PALETTE)) % len(SHAPES)]) for k, l in enumerate(named)}
    if any(not l for l in labels):
        styles[UNLABELED] = ("#999999", "circle")
    return styles


def export_plot(
    coords: np.ndarray,
    ids: Sequence[str],
    labels: Sequence[Optional[str]],
    out_dir: str | os.PathLike,
    stem: str = "projection",
    manifest: Optional[str] = None,
) -> tuple[str, str]:
    """Write ``<stem>.csv`` and a self-contained ``<stem>.svg`` scatter."""
    coords = np.asarray(coords, dtype=np.float64)
    if not (len(coords) == len(ids) == len(labels)):
        raise ValueError("coords, ids and labels must align")
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    svg_path = os.path.join(out_dir, f"{stem}.svg")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        if manifest:
            fh.write(f"# manifest: {manifest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "x", "y", "label"])
        for bid, (x, y), lab in zip(ids, coords, labels):
            w.writerow([bid, repr(float(x)), repr(float(y)), lab or ""])

    styles = label_styles(labels)
    size, pad, legend_w = 600.0, 20.0, 220.0
    lo, hi = (coords.min(axis=0), coords.max(axis=0)) if len(coords) else (np.zeros(2), np.ones(2))
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    body = []
    for (x, y), lab in zip(coords, labels):
        key = lab or UNLABELED
        color, shape = styles[key]
        px = pad + (x - lo[0]) / span[0] * (size - 2 * pad)
        py = pad + (hi[1] - y) / span[1] * (size - 2 * pad)
        body.append(_mark(shape, px, py, color, hollow=not lab))
    legend = []
    for k, (lab, (color, shape)) in enumerate(styles.items()):
        ly = pad + 16 * k
        legend.append(
            f'<g class="legend-entry">{_mark(shape, size + 12, ly, color, hollow=lab == UNLABELED)}'
            f'<text x="{size + 24}" y="{ly + 4}" font-size="11" font-family="sans-serif">{escape(lab)}</text></g>'
        )
    height = max(size, pad * 2 + 16 * len(styles))
    head = f"<!-- manifest: {manifest} -->\n" if manifest else ""
    svg = (
        f"{head}<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size + legend_w:.0f}\" height=\"{height:.0f}\">\n"
        f'<rect width="100%" height="100%" fill="white"/>\n'
        + "\n".join(body) + "\n" + "\n".join(legend) + "\n</svg>\n"
    )
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return csv_path, svg_path
