import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cctriage import dataset as ds
from cctriage import text_pipeline as tp

GOLDEN = Path(__file__).parent / "data" / "tokenizer_golden.tsv"


# ---------------------------------------------------------------------------
# preprocessing


def test_preprocess_masks_numbers_and_drops_stopwords():
    assert tp.preprocess("Fever of 102 for 3 days") == ["fever", "#", "#", "days"]


def test_preprocess_empty():
    assert tp.preprocess("") == []


def test_preprocess_misspelled_query():
    assert tp.preprocess("i have had a headche for two days") == ["headche", "two", "days"]


def test_preprocess_keeps_mixed_alphanumerics():
    assert tp.preprocess("b12 shot declined") == ["b12", "shot", "declined"]


def test_preprocess_lowercases():
    assert tp.preprocess("FEVER Chills") == ["fever", "chills"]


def test_preprocess_output_has_no_stopwords_or_digit_runs():
    tokens = tp.preprocess("I was having 3 headaches, 10 naps and the flu!")
    assert not any(t in ds.STOPWORDS for t in tokens)
    assert all(t == "#" or not t.isdigit() for t in tokens)


def test_preprocess_idempotent_token_subset():
    for text in ["Fever of 102 for 3 days", "knee (left) hurts!", "can't sleep"]:
        once = tp.preprocess(text)
        twice = tp.preprocess(" ".join(once))
        assert set(twice) <= set(once)


def test_tokenizer_golden_corpus():
    lines = GOLDEN.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 50
    for line in lines:
        text, expected = line.split("\t")
        assert tp.ptb_tokenize(text) == expected.split(" "), text


def test_stopword_list_size():
    assert len(ds.STOPWORDS) == 179


# ---------------------------------------------------------------------------
# n-grams


def test_ngrams_unigrams_then_bigrams():
    assert tp.extract_ngrams(["a", "b", "c"]) == [
        ("a",), ("b",), ("c",), ("a", "b"), ("b", "c"),
    ]


def test_ngrams_single_token():
    assert tp.extract_ngrams(["a"]) == [("a",)]


def test_ngrams_empty():
    assert tp.extract_ngrams([]) == []


def test_ngrams_keep_duplicates():
    grams = tp.extract_ngrams(["a", "a"])
    assert grams == [("a",), ("a",), ("a", "a")]


# ---------------------------------------------------------------------------
# tf-idf fitting


def test_fit_two_document_worked_example():
    model = tp.fit_tfidf(["head pain", "back pain"])
    assert ("pain",) not in model.vocab  # df 1.0 > 0.5
    assert set(model.vocab) == {("head",), ("back",), ("head", "pain"), ("back", "pain")}
    expected_idf = math.log(3 / 2) + 1
    assert np.allclose(model.idf, expected_idf, atol=1e-12)


def test_transform_two_document_worked_example():
    model = tp.fit_tfidf(["head pain", "back pain"])
    vec = tp.transform_tfidf(model, "head pain")
    assert vec.nnz == 2
    grams = model.column_ngrams()
    assert {grams[j] for j in vec.indices} == {("head",), ("head", "pain")}
    assert np.allclose(vec.values, [0.7071, 0.7071], atol=1e-4)
    assert abs(np.linalg.norm(vec.values) - 1.0) < 1e-9


def test_fit_empty_corpus_raises():
    with pytest.raises(ValueError):
        tp.fit_tfidf([])


def test_fit_vocab_cap():
    corpus = [f"word{i} extra{i}" for i in range(20)]
    model = tp.fit_tfidf(corpus, max_vocab=1)
    assert model.dim == 1


def test_fit_max_df_is_inclusive():
    # "pain" appears in exactly half the documents: df = 0.5 is kept
    model = tp.fit_tfidf(["head pain", "back ache", "arm pain", "leg ache"])
    assert ("pain",) in model.vocab
    assert ("ache",) in model.vocab


def test_fit_ranking_df_desc_then_lexicographic():
    corpus = ["aa bb", "aa cc", "bb dd", "ee ff"]
    model = tp.fit_tfidf(corpus)
    grams = model.column_ngrams()
    # df: aa=bb=0.5 (kept, tie broken lexicographically), everything else 0.25
    assert grams[0] == ("aa",)
    assert grams[1] == ("bb",)
    dfs = [model.df_counts[j] for j in range(model.dim)]
    assert dfs == sorted(dfs, reverse=True)


def test_fit_deterministic_and_serialization_byte_identical(tmp_path):
    config = ds.SynthConfig(rng_seed=6, n_labels=8, n_encounters=300)
    corpus = [e.text for e in ds.generate_synthetic(config)]
    m1 = tp.fit_tfidf(corpus)
    m2 = tp.fit_tfidf(corpus)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    tp.save_tfidf(m1, p1)
    tp.save_tfidf(m2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_tfidf_file_roundtrip(tmp_path):
    model = tp.fit_tfidf(["head pain", "back pain", "neck strain"])
    path = tmp_path / "m.bin"
    tp.save_tfidf(model, path)
    loaded = tp.load_tfidf(path)
    assert loaded.vocab == model.vocab
    assert loaded.n_docs == model.n_docs
    assert loaded.max_df == model.max_df
    assert np.array_equal(loaded.idf, model.idf)
    second = tmp_path / "m2.bin"
    tp.save_tfidf(loaded, second)
    assert second.read_bytes() == path.read_bytes()


def test_tfidf_file_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(ValueError, match="bad magic"):
        tp.load_tfidf(path)


# ---------------------------------------------------------------------------
# transform properties


def test_transform_oov_is_zero_vector():
    model = tp.fit_tfidf(["head pain", "back pain"])
    vec = tp.transform_tfidf(model, "zzz qqq")
    assert vec.nnz == 0
    assert np.all(vec.to_dense() == 0)


def test_transform_depends_on_ngram_multiset():
    model = tp.fit_tfidf(["alpha beta", "gamma delta", "alpha gamma"])
    a = tp.transform_tfidf(model, "alpha. beta?")
    b = tp.transform_tfidf(model, "alpha beta")
    unigram_cols = [j for g, j in model.vocab.items() if len(g) == 1]
    da, db = a.to_dense(), b.to_dense()
    assert np.allclose(da[unigram_cols] * np.linalg.norm(db[unigram_cols]),
                       db[unigram_cols] * np.linalg.norm(da[unigram_cols]), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["head", "back", "pain", "ache", "arm", "leg"]),
                min_size=0, max_size=6))
def test_transform_norm_is_unit_or_zero(words):
    model = tp.fit_tfidf(["head pain", "back ache", "arm pain hurts",
                          "leg ache burns", "neck pain"])
    vec = tp.transform_tfidf(model, " ".join(words))
    norm = np.linalg.norm(vec.values)
    assert vec.nnz == 0 or abs(norm - 1.0) < 1e-9


def test_fitted_model_invariants_scan():
    config = ds.SynthConfig(rng_seed=9, n_labels=10, n_encounters=500)
    corpus = [e.text for e in ds.generate_synthetic(config)]
    model = tp.fit_tfidf(corpus)
    assert model.dim <= tp.DEFAULT_MAX_VOCAB
    assert np.all(model.df_counts / model.n_docs <= model.max_df)
    assert np.all(np.isfinite(model.idf)) and np.all(model.idf > 0)
    cols = sorted(model.vocab.values())
    assert cols == list(range(model.dim))
