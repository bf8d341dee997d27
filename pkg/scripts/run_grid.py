#!/usr/bin/env python3
"""Hyperparameter grid search demo: hidden size x dropout, 5-fold CV.

Trains every combination of hidden size {500, 1000, 2000} and dropout
{0, 0.2, 0.3} with cross validation on a synthetic dataset and reports the
mean validation micro PR-AUC per configuration.  Sizes are kept small so
the grid finishes in a few minutes; use --folds/--max-epochs to scale up.

Usage: python3 scripts/run_grid.py [--folds 3] [--max-epochs 15]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from cctriage import dataset as ds, model as M, text_pipeline as tp

HIDDEN_GRID = (500, 1000, 2000)
DROPOUT_GRID = (0.0, 0.2, 0.3)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--folds", type=int, default=3)
    parser.add_argument("--max-epochs", type=int, default=15)
    parser.add_argument("--n-encounters", type=int, default=900)
    parser.add_argument("--n-labels", type=int, default=8)
    args = parser.parse_args()

    synth = ds.SynthConfig(rng_seed=args.seed, n_labels=args.n_labels,
                           n_encounters=args.n_encounters, templates_per_label=6)
    encounters = ds.generate_synthetic(synth)
    split = ds.split_no_overlap(encounters, 0.2, rng_seed=args.seed)
    vocab = ds.build_label_vocab(split.train, min_count=3)
    source = tp.fit_tfidf([e.text for e in split.train])
    folds = ds.kfold(list(split.train), k=args.folds, rng_seed=args.seed)
    config = M.TrainConfig(rng_seed=args.seed, max_epochs=args.max_epochs,
                           batch_size=64)

    results = []
    for hidden in HIDDEN_GRID:
        for dropout in DROPOUT_GRID:
            scores = []
            for tr, val in folds:
                _, log = M.train(tr, val, source, vocab, config,
                                 hidden_size=hidden, dropout_p=dropout)
                scores.append(max(r.val_pr_auc for r in log.records))
            mean = float(np.mean(scores))
            sd = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
            results.append((mean, sd, hidden, dropout))
            print(f"hidden={hidden:<5d} dropout={dropout:<4g} "
                  f"val PR-AUC {mean:.4f}±{sd:.4f}")

    results.sort(reverse=True)
    best = results[0]
    print(f"\nbest configuration: hidden={best[2]} dropout={best[3]:g} "
          f"({best[0]:.4f}±{best[1]:.4f})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
