import numpy as np
import pytest

from cctriage import dataset, metrics, model, text_pipeline


@pytest.fixture(scope="session")
def tiny_corpus():
    config = dataset.SynthConfig(rng_seed=42, n_labels=6, n_encounters=240,
                                 templates_per_label=5)
    return dataset.generate_synthetic(config)


@pytest.fixture(scope="session")
def tiny_trained(tiny_corpus):
    """A small trained tfidf model shared by CLI/service/analysis tests."""
    vocab = dataset.build_label_vocab(tiny_corpus, min_count=3)
    source = text_pipeline.fit_tfidf([e.text for e in tiny_corpus])
    config = model.TrainConfig(rng_seed=0, max_epochs=30, batch_size=64)
    params, log = model.train(tiny_corpus, tiny_corpus, source, vocab, config,
                              hidden_size=32, dropout_p=0.0)
    return params, vocab, source, log


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory, tiny_trained):
    """tiny_trained saved to disk in the layout the CLI produces."""
    params, vocab, source, _ = tiny_trained
    out = tmp_path_factory.mktemp("tiny_model")
    model.save_model(params, vocab.labels, "tfidf", out / "model.ccmdl")
    text_pipeline.save_tfidf(source, out / "tfidf.bin")
    return out


def brute_force_average_precision(scores, targets):
    """Recompute precision and recall from scratch at every distinct threshold."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(targets, dtype=np.float64).ravel()
    n_pos = y.sum()
    thresholds = np.unique(s)[::-1]
    ap = 0.0
    prev_recall = 0.0
    for t in thresholds:
        pred = s >= t
        tp = float(y[pred].sum())
        precision = tp / float(pred.sum())
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def brute_force_roc_auc(scores, targets):
    """Pairwise positive-vs-negative comparison with half credit for ties."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(targets).ravel()
    pos = s[y == 1]
    neg = s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def damerau_oracle(a, b, memo=None):
    """Independent recursive Damerau-Levenshtein distance (memoized)."""
    if memo is None:
        memo = {}

    def rec(i, j):
        if (i, j) in memo:
            return memo[(i, j)]
        if i == 0 or j == 0:
            return max(i, j)
        best = rec(i - 1, j) + 1
        best = min(best, rec(i, j - 1) + 1)
        best = min(best, rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
        if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1]:
            best = min(best, rec(i - 2, j - 2) + 1)
        memo[(i, j)] = best
        return best

    import sys

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(10000)
    try:
        return rec(len(a), len(b))
    finally:
        sys.setrecursionlimit(old)
