"""Complaint-space clustering: per-label mean prediction vectors and t-SNE.

For every label c, the mean predicted probability vector over the
encounters that carry c gives a C-dimensional signature of how the model
confuses c with every other label.  Projecting those signatures to 2-D
with t-SNE groups related complaints together.

The t-SNE here is the exact O(n^2) variant: per-point Gaussian bandwidths
found by bisection to match the target perplexity, symmetrized input
affinities, Student-t low-dimensional affinities, and gradient descent
with early exaggeration, momentum switching, and adaptive per-coordinate
gains.  The point count is one per label, so the quadratic cost is fine.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Encounter, LabelVocabulary
from .model import ClassifierParams, predict_proba

_EPS = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    n_iter: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    rng_seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 0:
            raise ValueError("perplexity must be positive")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")


@dataclass
class TsneResult:
    coords: np.ndarray       # (n, 2)
    kl_history: np.ndarray   # KL divergence against the unexaggerated P, per iteration


@dataclass
class MeanCCMatrix:
    """Row c: mean prediction over encounters whose label set contains c."""

    labels: tuple[str, ...]
    rows: np.ndarray     # (C, C)
    support: np.ndarray  # (C,) encounter counts per row


def mean_cc_vectors(params: ClassifierParams, encounters: Sequence[Encounter],
                    vocab: LabelVocabulary, source) -> MeanCCMatrix:
    C = len(vocab)
    probs = predict_proba(params, source, list(encounters))
    sums = np.zeros((C, C), dtype=np.float64)
    support = np.zeros(C, dtype=np.int64)
    for i, enc in enumerate(encounters):
        for label in enc.labels:
            if label in vocab:
                c = vocab.index(label)
                sums[c] += probs[i]
                support[c] += 1
    rows = np.zeros_like(sums)
    nonzero = support > 0
    rows[nonzero] = sums[nonzero] / support[nonzero, None]
    return MeanCCMatrix(tuple(vocab.labels), rows, support)


# ---------------------------------------------------------------------------
# exact t-SNE


def _conditional_affinities(D2: np.ndarray, perplexity: float,
                            tol: float = 1e-5, max_iter: int = 200) -> np.ndarray:
    """Row-conditional Gaussian affinities matching the target perplexity.

    The per-point precision beta is found by expanding-bound bisection on
    the achieved perplexity exp(H(P_i)).
    """
    n = D2.shape[0]
    P = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        d = np.delete(D2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            sw = w.sum()
            if sw <= 0:
                hi = beta
                beta = beta / 2.0
                continue
            p = w / sw
            entropy = np.log(sw) + beta * float(np.dot(d, p))
            achieved = np.exp(entropy)
            if abs(achieved - perplexity) < tol:
                break
            if achieved > perplexity:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        row = np.exp(-d * beta)
        row /= row.sum()
        P[i, np.arange(n) != i] = row
    return P


def tsne_project(points, config: TsneConfig = TsneConfig()) -> TsneResult:
    """Exact t-SNE projection of the input vectors to 2-D.

    Deterministic for a fixed seed.  Points are processed in a canonical
    (lexicographically sorted) order internally and un-permuted at the end,
    so permuting the input permutes the output coordinates exactly.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n = X.shape[0]
    if n < 3 * config.perplexity + 1:
        raise ValueError(
            f"perplexity {config.perplexity} infeasible for {n} points "
            f"(need at least {int(3 * config.perplexity + 1)})"
        )
    order = np.lexsort(X.T[::-1])
    Xs = X[order].copy()

    rng = np.random.default_rng(config.rng_seed)
    # Duplicate rows collapse the bandwidth search; jitter them apart.
    _, first_idx = np.unique(Xs, axis=0, return_index=True)
    dup = np.setdiff1d(np.arange(n), first_idx)
    if len(dup):
        Xs[dup] += rng.normal(0.0, 1e-10, size=(len(dup), X.shape[1]))

    sq_norms = (Xs * Xs).sum(axis=1)
    D2 = np.maximum(sq_norms[:, None] + sq_norms[None, :] - 2.0 * Xs @ Xs.T, 0.0)
    P_cond = _conditional_affinities(D2, config.perplexity)
    P = (P_cond + P_cond.T) / (2.0 * n)
    P = np.maximum(P, _EPS)

    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_history = np.empty(config.n_iter, dtype=np.float64)

    for it in range(config.n_iter):
        exaggerating = it < config.exaggeration_iters
        P_eff = P * config.early_exaggeration if exaggerating else P
        momentum = config.momentum_early if exaggerating else config.momentum_late

        diff = Y[:, None, :] - Y[None, :, :]
        num = 1.0 / (1.0 + (diff * diff).sum(axis=2))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), _EPS)

        PQ = (P_eff - Q) * num
        grad = 4.0 * (PQ.sum(axis=1)[:, None] * Y - PQ @ Y)

        flip = (update * grad) < 0.0
        gains[flip] += 0.2
        gains[~flip] *= 0.8
        np.clip(gains, 0.01, None, out=gains)
        update = momentum * update - config.learning_rate * (gains * grad)
        Y = Y + update
        Y -= Y.mean(axis=0)

        kl_history[it] = float(np.sum(P * np.log(P / Q)))

    coords = np.empty_like(Y)
    coords[order] = Y
    return TsneResult(coords, kl_history)


# ---------------------------------------------------------------------------
# projection export: tab-delimited (label, x, y, support)


def export_projection(coords: np.ndarray, labels: Sequence[str],
                      support: Sequence[int], path) -> None:
    """Write one line per label with positive support."""
    if not (len(coords) == len(labels) == len(support)):
        raise ValueError("coords, labels, and support must have equal lengths")
    with open(path, "w", encoding="utf-8") as fh:
        for (x, y), label, count in zip(coords, labels, support):
            if count <= 0:
                continue
            fh.write(f"{label}\t{x:.9g}\t{y:.9g}\t{int(count)}\n")


def read_projection(path) -> list[tuple[str, float, float, int]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            label, x, y, count = line.rstrip("\n").split("\t")
            rows.append((label, float(x), float(y), int(count)))
    return rows
