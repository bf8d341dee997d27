"""Deterministic text preprocessing and TF-IDF vectorization.

Preprocessing is lowercase -> treebank-style tokenization -> stop-word
removal -> digit masking (each all-digit token becomes "#"; mixed tokens
like "b12" are left alone).  The tokenizer implements the classic treebank
rule subset:

  * most punctuation is split into separate tokens ("," ":" ";" "@" "#"
    "$" "%" "&" "?" "!" parentheses, brackets, double dashes, ellipses);
  * a comma or colon stays attached inside digit runs ("3,000");
  * the sentence-final period is split off, internal periods are kept;
  * double quotes become `` / '' pairs;
  * contraction clitics ('s 'm 'd 'll 're 've n't) are split off, and a
    small closed set (cannot, gonna, gotta, gimme, lemme, wanna, d'ye,
    mor'n, 'tis, 'twas) is split in two.

The exact behaviour is frozen by a golden corpus in the test suite.

TF-IDF keeps the most common unigrams and bigrams (ranked by document
frequency, ties broken lexicographically) subject to a maximum document
frequency, weights raw term counts by a smoothed inverse document
frequency, and l2-normalizes each vector.
"""

from __future__ import annotations

import math
import re
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import STOPWORDS

Ngram = tuple[str, ...]

DEFAULT_MAX_VOCAB = 50_000
DEFAULT_MAX_DF = 0.5

_TFIDF_MAGIC = b"CCTFIDF1"

# Treebank rule subset, adapted from the standard sed-script port.
_STARTING_QUOTES = [
    (re.compile(r'^\"'), r"``"),
    (re.compile(r"(``)"), r" \1 "),
    (re.compile(r'([ (\[{<])"'), r"\1 `` "),
]
_PUNCTUATION = [
    (re.compile(r"([:,])([^\d])"), r" \1 \2"),
    (re.compile(r"([:,])$"), r" \1 "),
    (re.compile(r"\.\.\."), r" ... "),
    (re.compile(r"[;@#$%&]"), r" \g<0> "),
    (re.compile(r'([^\.])(\.)([\]\)}>"\']*)\s*$'), r"\1 \2\3 "),
    (re.compile(r"[?!]"), r" \g<0> "),
    (re.compile(r"([^'])' "), r"\1 ' "),
]
_PARENS_BRACKETS = [
    (re.compile(r"[\]\[\(\)\{\}\<\>]"), r" \g<0> "),
    (re.compile(r"--"), r" -- "),
]
_ENDING_QUOTES = [
    (re.compile(r'"'), " '' "),
    (re.compile(r"(\S)(\'\')"), r"\1 \2 "),
    (re.compile(r"([^' ])('[sS]|'[mM]|'[dD]|') "), r"\1 \2 "),
    (re.compile(r"([^' ])('ll|'LL|'re|'RE|'ve|'VE|n't|N'T) "), r"\1 \2 "),
]
_CONTRACTIONS2 = [
    re.compile(r"(?i)\b(can)(not)\b"),
    re.compile(r"(?i)\b(d)('ye)\b"),
    re.compile(r"(?i)\b(gim)(me)\b"),
    re.compile(r"(?i)\b(gon)(na)\b"),
    re.compile(r"(?i)\b(got)(ta)\b"),
    re.compile(r"(?i)\b(lem)(me)\b"),
    re.compile(r"(?i)\b(mor)('n)\b"),
    re.compile(r"(?i)\b(wan)(na) "),
]
_CONTRACTIONS3 = [
    re.compile(r"(?i) ('t)(is)\b"),
    re.compile(r"(?i) ('t)(was)\b"),
]


def ptb_tokenize(text: str) -> list[str]:
    for regexp, substitution in _STARTING_QUOTES:
        text = regexp.sub(substitution, text)
    for regexp, substitution in _PUNCTUATION:
        text = regexp.sub(substitution, text)
    for regexp, substitution in _PARENS_BRACKETS:
        text = regexp.sub(substitution, text)
    text = " " + text + " "
    for regexp, substitution in _ENDING_QUOTES:
        text = regexp.sub(substitution, text)
    for regexp in _CONTRACTIONS2:
        text = regexp.sub(r" \1 \2 ", text)
    for regexp in _CONTRACTIONS3:
        text = regexp.sub(r" \1 \2 ", text)
    return text.split()


_ALL_DIGITS = re.compile(r"\d+")


def preprocess(text: str) -> list[str]:
    """Lowercase, tokenize, remove stop-words, mask all-digit tokens to "#"."""
    tokens = ptb_tokenize(text.lower())
    out = []
    for tok in tokens:
        if tok in STOPWORDS:
            continue
        out.append("#" if _ALL_DIGITS.fullmatch(tok) else tok)
    return out


def extract_ngrams(tokens: Sequence[str]) -> list[Ngram]:
    """All unigrams followed by all adjacent bigrams; duplicates retained."""
    grams: list[Ngram] = [(tok,) for tok in tokens]
    grams.extend((tokens[i], tokens[i + 1]) for i in range(len(tokens) - 1))
    return grams


@dataclass(frozen=True)
class SparseVector:
    """l2-normalized sparse vector: sorted unique indices, positive values."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        out[self.indices] = self.values
        return out

    def scatter_into(self, out: np.ndarray) -> None:
        out[self.indices] = self.values


@dataclass(frozen=True)
class TfidfModel:
    """Fitted n-gram vocabulary with IDF weights.

    ``vocab`` maps an n-gram to its column index; columns are assigned in
    ranking order (document frequency descending, lexicographic tie-break),
    so refitting the same corpus reproduces the model byte for byte.
    """

    vocab: dict[Ngram, int]
    df_counts: np.ndarray
    idf: np.ndarray
    n_docs: int
    max_df: float

    @property
    def dim(self) -> int:
        return len(self.vocab)

    def column_ngrams(self) -> list[Ngram]:
        grams: list[Ngram] = [()] * len(self.vocab)
        for gram, j in self.vocab.items():
            grams[j] = gram
        return grams


def fit_tfidf(
    corpus: Sequence[str],
    max_vocab: int = DEFAULT_MAX_VOCAB,
    max_df: float = DEFAULT_MAX_DF,
) -> TfidfModel:
    """Fit vocabulary and IDF weights on raw text documents.

    Candidate n-grams with document frequency (fraction of documents that
    contain the n-gram) at most ``max_df`` are ranked by document frequency
    descending, ties broken lexicographically, and the top ``max_vocab``
    are kept.  idf[j] = ln((1 + n_docs) / (1 + df_count_j)) + 1.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if max_vocab < 1:
        raise ValueError("max_vocab must be >= 1")
    n_docs = len(corpus)
    df_counter: Counter[Ngram] = Counter()
    for text in corpus:
        df_counter.update(set(extract_ngrams(preprocess(text))))
    eligible = [(g, c) for g, c in df_counter.items() if c / n_docs <= max_df]
    if not eligible:
        raise ValueError("no n-grams satisfy the max_df constraint")
    eligible.sort(key=lambda gc: (-gc[1], gc[0]))
    kept = eligible[:max_vocab]
    vocab = {gram: j for j, (gram, _) in enumerate(kept)}
    df_counts = np.array([c for _, c in kept], dtype=np.int64)
    idf = np.log((1.0 + n_docs) / (1.0 + df_counts)) + 1.0
    return TfidfModel(vocab, df_counts, idf, n_docs, max_df)


def transform_tfidf(model: TfidfModel, text: str) -> SparseVector:
    """Raw term count times IDF, l2-normalized; out-of-vocabulary n-grams
    are ignored and a fully out-of-vocabulary text maps to the zero vector."""
    counts: Counter[int] = Counter()
    for gram in extract_ngrams(preprocess(text)):
        j = model.vocab.get(gram)
        if j is not None:
            counts[j] += 1
    if not counts:
        empty = np.array([], dtype=np.int64)
        return SparseVector(empty, np.array([], dtype=np.float64), model.dim)
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[j] for j in indices], dtype=np.float64) * model.idf[indices]
    values /= math.sqrt(float(np.dot(values, values)))
    return SparseVector(indices, values, model.dim)


# ---------------------------------------------------------------------------
# serialization (magic "CCTFIDF1"; round-trips byte-identically)


def save_tfidf(model: TfidfModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_TFIDF_MAGIC)
        fh.write(struct.pack("<Qd", model.n_docs, model.max_df))
        fh.write(struct.pack("<Q", model.dim))
        for j, gram in enumerate(model.column_ngrams()):
            fh.write(struct.pack("<B", len(gram)))
            for token in gram:
                raw = token.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            fh.write(struct.pack("<Qd", int(model.df_counts[j]), float(model.idf[j])))


def load_tfidf(path) -> TfidfModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_TFIDF_MAGIC))
        if magic != _TFIDF_MAGIC:
            raise ValueError(f"{path}: not a tfidf model file (bad magic {magic!r})")
        n_docs, max_df = struct.unpack("<Qd", _read_exact(fh, 16))
        (size,) = struct.unpack("<Q", _read_exact(fh, 8))
        vocab: dict[Ngram, int] = {}
        df_counts = np.empty(size, dtype=np.int64)
        idf = np.empty(size, dtype=np.float64)
        for j in range(size):
            (n,) = struct.unpack("<B", _read_exact(fh, 1))
            tokens = []
            for _ in range(n):
                (length,) = struct.unpack("<I", _read_exact(fh, 4))
                tokens.append(_read_exact(fh, length).decode("utf-8"))
            df_counts[j], idf[j] = struct.unpack("<Qd", _read_exact(fh, 16))
            vocab[tuple(tokens)] = j
        return TfidfModel(vocab, df_counts, idf, n_docs, max_df)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated file")
    return data
