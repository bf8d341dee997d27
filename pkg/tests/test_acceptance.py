"""Acceptance criteria, one test per criterion.

Each test prints a single "ACCEPTANCE <name>: PASS/FAIL" line (run pytest
with -s to see them inline; they also appear in captured output).  Stated
runtime budgets are asserted.
"""

import json
import shutil
import subprocess
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path
from random import Random

import numpy as np
import pytest

from cctriage import analysis as an
from cctriage import dataset as ds
from cctriage import metrics as mx
from cctriage import model as M
from cctriage import service
from cctriage import text_pipeline as tp
from conftest import (
    brute_force_average_precision,
    brute_force_roc_auc,
    damerau_oracle,
)

REPO_ROOT = Path(__file__).resolve().parent.parent


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name}: {detail}"


def test_welch_anchor():
    t0 = time.perf_counter()
    a = mx.synth_samples_from_summary(0.2579, 0.0079, 5)
    b = mx.synth_samples_from_summary(0.2733, 0.0130, 5)
    result = mx.welch_t_test(a, b)
    elapsed = time.perf_counter() - t0
    ok = 0.05 <= result.p_value <= 0.07 and elapsed < 1.0
    report("welch-anchor", ok,
           f"p={result.p_value:.4f} t={result.t_statistic:.3f} "
           f"df={result.degrees_of_freedom:.2f} ({elapsed:.2f}s)")


def test_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(100):
        D = int(rng.integers(1, 9))
        H = int(rng.integers(1, 7))
        C = int(rng.integers(1, 5))
        B = int(rng.integers(1, 6))
        dropout_p = float(rng.choice([0.0, 0.0, 0.2, 0.3]))
        params = M.init_params(D, H, C, rng_seed=int(rng.integers(1 << 30)),
                               dropout_p=dropout_p, dtype=np.float64)
        params.age_table += rng.normal(0, 0.2, params.age_table.shape)
        params.sex_table += rng.normal(0, 0.2, params.sex_table.shape)
        params.b1 += rng.normal(0, 0.1, params.b1.shape)
        params.b2 += rng.normal(0, 0.1, params.b2.shape)
        X = rng.normal(size=(B, D))
        age = rng.integers(0, 11, B)
        sex = rng.integers(0, 2, B)
        Y = rng.integers(0, 2, (B, C)).astype(np.float64)
        masks = None
        if dropout_p > 0:
            masks = (
                (rng.random((B, D)) >= dropout_p).astype(np.float64),
                (rng.random((B, H)) >= dropout_p).astype(np.float64),
            )
        cache = M.training_forward(params, X, age, sex, masks)
        grads = M.backward(params, cache, Y)

        def loss():
            c = M.training_forward(params, X, age, sex, masks)
            return M.bce_loss(c.probs, Y)

        h = 1e-5
        for name, tensor in params.tensors().items():
            it = np.nditer(tensor, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = tensor[idx]
                tensor[idx] = orig + h
                lp = loss()
                tensor[idx] = orig - h
                lm = loss()
                tensor[idx] = orig
                fd = (lp - lm) / (2 * h)
                an_ = grads[name][idx]
                worst = max(worst, abs(fd - an_) / max(abs(fd), abs(an_), 1e-6))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 30.0
    report("gradient-suite", ok, f"max rel err={worst:.2e} over 100 models ({elapsed:.1f}s)")


def test_overfit_check():
    t0 = time.perf_counter()
    config = ds.SynthConfig(rng_seed=11, n_labels=20, n_encounters=500,
                            templates_per_label=6)
    encounters = ds.generate_synthetic(config)
    vocab = ds.build_label_vocab(encounters, min_count=1)
    source = tp.fit_tfidf([e.text for e in encounters])
    train_config = M.TrainConfig(rng_seed=0, max_epochs=200, batch_size=64)
    params, log = M.train(encounters, encounters, source, vocab, train_config,
                          hidden_size=500, dropout_p=0.0)
    probs = M.predict_proba(params, source, encounters)
    targets = M.targets_matrix(encounters, vocab)
    pr = mx.micro_pr_auc(probs, targets)
    elapsed = time.perf_counter() - t0
    ok = pr >= 0.95 and len(log.records) <= 200 and elapsed < 300.0
    report("overfit-check", ok,
           f"train PR-AUC={pr:.4f} in {len(log.records)} epochs ({elapsed:.1f}s)")


def test_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_pr = worst_roc = 0.0
    for trial in range(1000):
        if trial % 10 == 0:
            n = int(rng.integers(500, 10_001))
            scores = rng.choice(np.round(rng.random(6), 3), size=n)
        else:
            n = int(rng.integers(2, 300))
            scores = rng.random(n) if rng.random() < 0.5 else rng.choice(
                [0.1, 0.4, 0.5, 0.9], size=n
            )
        targets = rng.integers(0, 2, n)
        if targets.sum() == 0:
            targets[0] = 1
        if targets.sum() == n:
            targets[-1] = 0
        worst_pr = max(worst_pr, abs(
            mx.micro_pr_auc(scores, targets)
            - brute_force_average_precision(scores, targets)
        ))
        worst_roc = max(worst_roc, abs(
            mx.micro_roc_auc(scores, targets) - brute_force_roc_auc(scores, targets)
        ))
    elapsed = time.perf_counter() - t0
    ok = worst_pr <= 1e-12 and worst_roc <= 1e-12 and elapsed < 60.0
    report("metric-oracles", ok,
           f"max |diff| pr={worst_pr:.1e} roc={worst_roc:.1e} "
           f"over 1000 instances ({elapsed:.1f}s)")


def test_tfidf_oracle():
    t0 = time.perf_counter()
    model = tp.fit_tfidf(["head pain", "back pain"])
    checks = []
    checks.append(("pain",) not in model.vocab)
    expected_idf = np.log(3 / 2) + 1
    checks.append(bool(np.all(np.abs(model.idf - expected_idf) < 1e-6)))
    vec = tp.transform_tfidf(model, "head pain")
    checks.append(vec.nnz == 2 and np.all(np.abs(vec.values - 0.7071) < 1e-4))

    config = ds.SynthConfig(rng_seed=31, n_labels=40, n_encounters=10_000,
                            templates_per_label=10, misspelling_rate=0.1)
    corpus = [e.text for e in ds.generate_synthetic(config)]
    big = tp.fit_tfidf(corpus)
    checks.append(big.dim <= 50_000)
    checks.append(bool(np.all(big.df_counts / big.n_docs <= big.max_df + 1e-15)))
    norms_ok = True
    for text in corpus[:500]:
        v = tp.transform_tfidf(big, text)
        if v.nnz and abs(np.linalg.norm(v.values) - 1.0) > 1e-9:
            norms_ok = False
    checks.append(norms_ok)
    elapsed = time.perf_counter() - t0
    report("tfidf-oracle", all(checks),
           f"worked example + scan of {big.dim}-column model on 10k docs ({elapsed:.1f}s)")


def test_split_and_kfold_leakage():
    t0 = time.perf_counter()
    collisions = 0
    partitions_ok = True
    for seed in range(100):
        config = ds.SynthConfig(rng_seed=seed, n_labels=6, n_encounters=150,
                                templates_per_label=5)
        encounters = ds.generate_synthetic(config)
        split = ds.split_no_overlap(encounters, 0.25, rng_seed=seed)
        train_norm = {ds.normalize_text(e.text) for e in split.train}
        test_norm = {ds.normalize_text(e.text) for e in split.test}
        collisions += len(train_norm & test_norm)
        folds = ds.kfold(list(split.train), k=5, rng_seed=seed)
        pooled = sorted(e.text for _, val in folds for e in val)
        if pooled != sorted(e.text for e in split.train):
            partitions_ok = False
        sizes = [len(val) for _, val in folds]
        if max(sizes) - min(sizes) > 1:
            partitions_ok = False
    elapsed = time.perf_counter() - t0
    ok = collisions == 0 and partitions_ok
    report("split-leakage", ok,
           f"collisions={collisions} over 100 seeded splits, k-fold partition "
           f"{'holds' if partitions_ok else 'BROKEN'} ({elapsed:.1f}s)")


def test_misspelling_generator():
    t0 = time.perf_counter()
    rng = Random(99)
    config = ds.MisspellConfig(per_text_edits=1)
    base_texts = [
        "my headache is terrible today",
        "sharp stomach pain since tuesday",
        "shortness of breath walking",
        "dizzy spells every single morning",
        "sore throat and runny nose",
    ]
    exact = 0
    total = 1000
    for i in range(total):
        text = base_texts[i % len(base_texts)]
        result = ds.misspell(text, config, rng)
        if result.changed and damerau_oracle(text, result.text) == config.per_text_edits:
            exact += 1
    elapsed = time.perf_counter() - t0
    ok = exact == total
    report("misspelling-generator", ok,
           f"{exact}/{total} at Damerau distance exactly {config.per_text_edits} "
           f"({elapsed:.1f}s)")


def test_end_to_end_robustness():
    t0 = time.perf_counter()
    config = ds.SynthConfig(rng_seed=23, n_labels=10, n_encounters=1200,
                            templates_per_label=6)
    encounters = ds.generate_synthetic(config)
    split = ds.split_no_overlap(encounters, 0.25, rng_seed=0)
    vocab = ds.build_label_vocab(split.train, min_count=3)
    source = tp.fit_tfidf([e.text for e in split.train])

    # misspelling_rate 0.3 applied to a copy of the test set
    rng = Random(5)
    mis_config = ds.MisspellConfig(rng_seed=5)
    perturbed = []
    for e in split.test:
        if rng.random() < 0.3:
            perturbed.append(e.with_text(ds.misspell(e.text, mis_config, rng).text))
        else:
            perturbed.append(e)

    train_config = M.TrainConfig(rng_seed=0, max_epochs=20, batch_size=64)
    clean_scores, perturbed_scores = [], []
    for tr, val in ds.kfold(list(split.train), k=5, rng_seed=0):
        params, _ = M.train(tr, val, source, vocab, train_config,
                            hidden_size=128, dropout_p=0.0)
        targets_clean = M.targets_matrix(list(split.test), vocab)
        clean_scores.append(mx.micro_pr_auc(
            M.predict_proba(params, source, list(split.test)), targets_clean))
        targets_perturbed = M.targets_matrix(perturbed, vocab)
        perturbed_scores.append(mx.micro_pr_auc(
            M.predict_proba(params, source, perturbed), targets_perturbed))
    clean_mean = float(np.mean(clean_scores))
    perturbed_mean = float(np.mean(perturbed_scores))
    elapsed = time.perf_counter() - t0
    ok = perturbed_mean < clean_mean
    report("e2e-robustness", ok,
           f"clean={clean_mean:.4f} perturbed={perturbed_mean:.4f} over 5 folds "
           f"({elapsed:.1f}s)")


def test_tsne_recovery():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    centers = rng.normal(0, 10, (3, 10))
    points = np.vstack([c + rng.normal(0, 0.5, (34, 10)) for c in centers])[:100]
    ids = np.repeat([0, 1, 2], 34)[:100]
    config = an.TsneConfig(perplexity=30, rng_seed=0)
    result = an.tsne_project(points, config)
    coords = result.coords
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    agreement = float((ids[d2.argmin(1)] == ids).mean())
    kl_ok = result.kl_history[-1] <= result.kl_history[config.exaggeration_iters - 1]
    elapsed = time.perf_counter() - t0
    ok = agreement >= 0.9 and bool(kl_ok)
    report("tsne-recovery", ok,
           f"nn agreement={agreement:.2f} "
           f"KL {result.kl_history[config.exaggeration_iters - 1]:.3f}->"
           f"{result.kl_history[-1]:.3f} ({elapsed:.1f}s)")


def test_service_parity(tiny_model_dir, tiny_corpus):
    t0 = time.perf_counter()
    bundle = service.load_bundle(tiny_model_dir / "model.ccmdl")
    server = service.InferenceServer(("127.0.0.1", 0), bundle)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    rng = Random(17)
    texts = sorted({e.text for e in tiny_corpus})
    try:
        worst = 0.0
        for _ in range(100):
            text = rng.choice(texts)
            age = rng.choice([None, rng.randrange(11)])
            sex = rng.choice([None, "F", "M"])
            payload = {"text": text, "top_k": rng.randrange(1, 8)}
            if age is not None:
                payload["age_group"] = age
            if sex is not None:
                payload["sex"] = sex
            req = urllib.request.Request(
                base + "/predict", data=json.dumps(payload).encode(), method="POST"
            )
            with urllib.request.urlopen(req) as resp:
                got = json.loads(resp.read())["predictions"]
            expected = service.predict_ranked(bundle, text, age, sex, payload["top_k"])
            assert [g["label"] for g in got] == [e[0] for e in expected]
            for g, (_, p) in zip(got, expected):
                worst = max(worst, abs(g["probability"] - p))

        codes = {}
        for name, payload, want in [
            ("bad-json", b"{", 400),
            ("empty-text", json.dumps({"text": ""}).encode(), 422),
            ("bad-top-k", json.dumps({"text": "x", "top_k": -2}).encode(), 422),
            ("bad-age", json.dumps({"text": "x", "age_group": 99}).encode(), 422),
        ]:
            req = urllib.request.Request(base + "/predict", data=payload, method="POST")
            try:
                urllib.request.urlopen(req)
                codes[name] = 200
            except urllib.error.HTTPError as err:
                codes[name] = err.code
        errors_ok = codes == {"bad-json": 400, "empty-text": 422,
                              "bad-top-k": 422, "bad-age": 422}
    finally:
        server.shutdown()
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and errors_ok
    report("service-parity", ok,
           f"max |diff|={worst:.1e} over 100 requests, error codes "
           f"{'correct' if errors_ok else codes} ({elapsed:.1f}s)")


def test_exporter_conformance(tmp_path):
    """[SECONDARY] the TypeScript exporter writes files the primary reads."""
    t0 = time.perf_counter()
    node = shutil.which("node")
    cli_js = REPO_ROOT / "frontend" / "dist" / "cli.js"
    if node is None:
        pytest.skip("node not available")
    if not cli_js.exists():
        built = subprocess.run(
            ["npm", "--prefix", str(REPO_ROOT / "frontend"), "run", "build"],
            capture_output=True, text=True,
        )
        if not cli_js.exists():
            pytest.skip(f"frontend not built: {built.stderr[-400:]}")

    texts = ["bad rane", "mild rako today", "fever of 102 for 3 days",
             "worried about chilu"]
    input_path = tmp_path / "texts.txt"
    input_path.write_text("\n".join(texts) + "\n", encoding="utf-8")
    outputs = []
    for run_idx in range(2):
        out = tmp_path / f"emb_{run_idx}.ccemb"
        manifest = tmp_path / f"manifest_{run_idx}.json"
        proc = subprocess.run(
            [node, str(cli_js), "--input", str(input_path), "--encoder",
             "reference-768", "--out", str(out), "--manifest", str(manifest)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outputs.append((out.read_bytes(), json.loads(manifest.read_text())))

    identical = outputs[0][0] == outputs[1][0]
    checksums_match = outputs[0][1]["sha256"] == outputs[1][1]["sha256"]
    emb = M.read_embedding_file(tmp_path / "emb_0.ccemb")
    dim_ok = emb.dim == 3072 == outputs[0][1]["dim"]
    keys_ok = set(emb.entries) == set(texts)
    vec_ok = all(v.shape == (3072,) and np.isfinite(v).all()
                 for v in emb.entries.values())
    elapsed = time.perf_counter() - t0
    ok = identical and checksums_match and dim_ok and keys_ok and vec_ok
    report("exporter-conformance", ok,
           f"dim={emb.dim} records={len(emb.entries)} deterministic={identical} "
           f"({elapsed:.1f}s)")
