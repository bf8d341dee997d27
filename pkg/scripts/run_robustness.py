#!/usr/bin/env python3
"""Clean-vs-misspelled robustness experiment on synthetic encounters.

Generates a synthetic dataset, splits it with no text overlap, trains the
TF-IDF classifier with 5-fold cross validation, and evaluates each fold on
the clean test set and on a copy with misspellings injected into 30% of
the texts.  Prints the per-fold report with mean +/- SD rows and the Welch
t-test between the two conditions, then writes a t-SNE projection of the
per-label mean prediction vectors.

Usage: python3 scripts/run_robustness.py [--quick] [--out-dir OUT]
"""

import argparse
import sys
from pathlib import Path
from random import Random

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from cctriage import analysis, dataset as ds, metrics as mx, model as M
from cctriage import text_pipeline as tp


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quick", action="store_true", help="smaller dataset, fewer epochs")
    parser.add_argument("--out-dir", default="robustness_out")
    args = parser.parse_args()

    n_encounters = 1200 if args.quick else 4000
    n_labels = 10 if args.quick else 25
    max_epochs = 20 if args.quick else 60

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    synth = ds.SynthConfig(rng_seed=args.seed, n_labels=n_labels,
                           n_encounters=n_encounters, templates_per_label=6)
    encounters = ds.generate_synthetic(synth)
    split = ds.split_no_overlap(encounters, 0.25, rng_seed=args.seed)
    vocab = ds.build_label_vocab(split.train, min_count=3)
    print(f"{len(split.train)} train / {len(split.test)} test encounters, "
          f"{len(vocab)} labels")

    source = tp.fit_tfidf([e.text for e in split.train])
    print(f"tfidf vocabulary: {source.dim} n-gram columns")

    rng = Random(args.seed)
    mis_config = ds.MisspellConfig(rng_seed=args.seed)
    perturbed = [
        e.with_text(ds.misspell(e.text, mis_config, rng).text)
        if rng.random() < 0.3 else e
        for e in split.test
    ]

    train_config = M.TrainConfig(rng_seed=args.seed, max_epochs=max_epochs,
                                 batch_size=64)
    folds = []
    last_params = None
    for i, (tr, val) in enumerate(ds.kfold(list(split.train), k=5,
                                           rng_seed=args.seed)):
        params, log = M.train(tr, val, source, vocab, train_config,
                              hidden_size=128, dropout_p=0.0)
        last_params = params
        for subset, data in [("test", list(split.test)), ("misspelling", perturbed)]:
            probs = M.predict_proba(params, source, data)
            targets = M.targets_matrix(data, vocab)
            folds.append(mx.FoldMetrics(
                family="tfidf", subset=subset, fold=i,
                pr_auc=mx.micro_pr_auc(probs, targets),
                roc_auc=mx.micro_roc_auc(probs, targets),
            ))
        print(f"fold {i}: {len(log.records)} epochs, "
              f"best val PR-AUC {max(r.val_pr_auc for r in log.records):.4f}")

    report = mx.EvalReport(folds)
    print()
    print(report.render())
    clean = report.fold_values("tfidf", "test")
    noisy = report.fold_values("tfidf", "misspelling")
    drop = mx.welch_t_test(clean, noisy)
    print(f"clean vs misspelled PR-AUC: t={drop.t_statistic:.3f} "
          f"df={drop.degrees_of_freedom:.2f} p={drop.p_value:.4g}")
    report.write(out_dir / "report.txt")

    mean_cc = analysis.mean_cc_vectors(last_params, list(split.test), vocab, source)
    keep = mean_cc.support > 0
    perplexity = min(5.0, (int(keep.sum()) - 2) / 3)
    result = analysis.tsne_project(
        mean_cc.rows[keep],
        analysis.TsneConfig(perplexity=perplexity, rng_seed=args.seed, n_iter=500),
    )
    coords = np.zeros((len(vocab), 2))
    coords[keep] = result.coords
    analysis.export_projection(coords, mean_cc.labels, mean_cc.support,
                               out_dir / "projection.tsv")
    print(f"wrote {out_dir}/report.txt and {out_dir}/projection.tsv")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
