"""Command-line surface for the full experiment lifecycle.

Subcommands: synth, prepare, train, evaluate, query, cluster, misspell,
serve.  Every random choice is driven by an explicit --seed flag; a JSON
config file passed with --config can supply any flag (explicit flags win).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from random import Random

import numpy as np

from . import analysis, dataset, metrics, model, service, text_pipeline

HIDDEN_GRID = (500, 1000, 2000)
DROPOUT_GRID = (0.0, 0.2, 0.3)


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install config-file values as parser defaults; flags still override.

    Defaults go onto every subparser that declares the flag (subparser
    defaults shadow parent-level ones in argparse).
    """
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    with open(known.config, encoding="utf-8") as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise SystemExit(f"--config {known.config}: expected a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    subparsers = [
        sub for action in parser._actions
        if isinstance(action, argparse._SubParsersAction)
        for sub in action.choices.values()
    ]
    matched = set()
    for sub in subparsers:
        dests = {a.dest for a in sub._actions}
        known_here = {k: v for k, v in values.items() if k in dests}
        matched.update(known_here)
        if known_here:
            sub.set_defaults(**known_here)
    unknown = set(values) - matched
    if unknown:
        raise SystemExit(f"--config {known.config}: unknown keys {sorted(unknown)}")


def _resolve_source(spec: str | None, model_dir: Path | None = None,
                    model_path: Path | None = None):
    """Turn an --embedding flag value into a fitted embedding source.

    Accepted forms: "tfidf" (find tfidf.bin near the model), "tfidf:<path>",
    "dense:<path>".
    """
    if spec is None or spec == "tfidf":
        for base in filter(None, (model_dir, model_path.parent if model_path else None)):
            for candidate in (base / "tfidf.bin", base.parent / "tfidf.bin"):
                if candidate.exists():
                    return text_pipeline.load_tfidf(candidate)
        raise SystemExit("no tfidf.bin found; pass --embedding tfidf:<path>")
    kind, _, path = spec.partition(":")
    if kind == "tfidf" and path:
        return text_pipeline.load_tfidf(path)
    if kind == "dense" and path:
        return model.read_embedding_file(path)
    raise SystemExit(f"bad --embedding value {spec!r} (use tfidf, tfidf:<path>, dense:<path>)")


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    skew = None
    if args.skew:
        with open(args.skew, encoding="utf-8") as fh:
            skew = json.load(fh)
    config = dataset.SynthConfig(
        rng_seed=args.seed,
        n_labels=args.n_labels,
        n_encounters=args.n_encounters,
        templates_per_label=args.templates_per_label,
        misspelling_rate=args.misspelling_rate,
        co_label_rate=args.co_label_rate,
        demographic_skew=skew,
    )
    encounters = dataset.generate_synthetic(config)
    dataset.write_encounters(args.out, encounters)
    print(f"wrote {len(encounters)} encounters to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# prepare


def cmd_prepare(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    encounters, malformed = dataset.read_encounters_lenient(args.raw)
    total_lines = len(encounters) + len(malformed)
    for line_no, message in malformed[:20]:
        print(f"malformed line {line_no}: {message}", file=sys.stderr)
    if total_lines and len(malformed) / total_lines > 0.01:
        print(f"error: {len(malformed)}/{total_lines} lines malformed (>1%)", file=sys.stderr)
        return 1

    cropped = [e.with_text(dataset.crop_text(e.text)) for e in encounters]
    labels_before = {l for e in cropped for l in e.labels}
    curated = dataset.apply_exclusions(cropped)
    labels_after = {l for e in curated for l in e.labels}
    dropped = len(cropped) - len(curated)

    split = dataset.split_no_overlap(curated, args.test_fraction, args.seed)
    vocab = dataset.build_label_vocab(split.train, args.min_count)

    sample_rng = Random(args.seed)
    n_sample = max(1, round(args.misspell_fraction * len(split.test)))
    sample = sample_rng.sample(list(split.test), min(n_sample, len(split.test)))
    misspelled = dataset.perturb_encounters(
        sample, dataset.MisspellConfig(rng_seed=args.seed, per_text_edits=args.misspell_edits)
    )

    dataset.write_encounters(out_dir / "train.jsonl", split.train)
    dataset.write_encounters(out_dir / "test.jsonl", split.test)
    dataset.write_encounters(out_dir / "misspelling.jsonl", misspelled)
    vocab.save(out_dir / "vocab.tsv")

    report = "\n".join([
        f"input_lines\t{total_lines}",
        f"malformed_lines\t{len(malformed)}",
        f"encounters_in\t{len(cropped)}",
        f"label_types_before\t{len(labels_before)}",
        f"label_types_excluded\t{len(labels_before) - len(labels_after)}",
        f"label_types_after\t{len(labels_after)}",
        f"encounters_dropped_by_exclusion\t{dropped}",
        f"encounters_retained\t{len(curated)}",
        f"train_encounters\t{len(split.train)}",
        f"test_encounters\t{len(split.test)}",
        f"misspelling_encounters\t{len(misspelled)}",
        f"vocab_labels\t{len(vocab)}",
        f"min_count\t{args.min_count}",
        f"test_fraction\t{args.test_fraction}",
        f"seed\t{args.seed}",
    ]) + "\n"
    (out_dir / "report.txt").write_text(report, encoding="utf-8")
    print(report, end="")
    return 0


# ---------------------------------------------------------------------------
# train


def _family_tag(hidden: int, dropout: float) -> str:
    return f"h{hidden}_d{dropout:g}"


def cmd_train(args) -> int:
    data_dir = Path(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_encounters = dataset.read_encounters(data_dir / "train.jsonl")
    vocab = dataset.LabelVocabulary.load(data_dir / "vocab.tsv")

    if args.embedding.startswith("dense:"):
        source = model.read_embedding_file(args.embedding.split(":", 1)[1])
        tag = "dense"
    elif args.embedding.startswith("tfidf:"):
        source = text_pipeline.load_tfidf(args.embedding.split(":", 1)[1])
        text_pipeline.save_tfidf(source, out_dir / "tfidf.bin")
        tag = "tfidf"
    elif args.embedding == "tfidf":
        source = text_pipeline.fit_tfidf(
            [e.text for e in train_encounters],
            max_vocab=args.max_vocab, max_df=args.max_df,
        )
        text_pipeline.save_tfidf(source, out_dir / "tfidf.bin")
        tag = "tfidf"
    else:
        raise SystemExit(f"bad --embedding value {args.embedding!r}")

    folds = dataset.kfold(train_encounters, k=args.folds, rng_seed=args.seed)
    combos = (
        [(h, d) for h in HIDDEN_GRID for d in DROPOUT_GRID]
        if args.grid
        else [(args.hidden, args.dropout)]
    )
    config = model.TrainConfig(rng_seed=args.seed, max_epochs=args.max_epochs,
                               batch_size=args.batch_size)

    selection = []
    for hidden, dropout in combos:
        family = _family_tag(hidden, dropout)
        family_dir = out_dir / family
        family_dir.mkdir(exist_ok=True)
        val_scores = []
        for i, (tr, val) in enumerate(folds):
            params, log = model.train(tr, val, source, vocab, config,
                                      hidden_size=hidden, dropout_p=dropout)
            model.save_model(params, vocab.labels, tag, family_dir / f"fold_{i}.ccmdl")
            (family_dir / f"fold_{i}.log.json").write_text(log.to_json(), encoding="utf-8")
            best = max(r.val_pr_auc for r in log.records)
            val_scores.append(best)
            print(f"{family} fold {i}: best val PR-AUC {best:.4f} "
                  f"({len(log.records)} epochs)")
        selection.append((family, float(np.mean(val_scores))))

    selection.sort(key=lambda fs: -fs[1])
    lines = [f"{family}\t{score:.6f}" for family, score in selection]
    lines.append(f"selected\t{selection[0][0]}")
    (out_dir / "selection.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"selected {selection[0][0]} (mean val PR-AUC {selection[0][1]:.4f})")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _load_family_models(spec: str, dense_path):
    name, _, dir_str = spec.partition("=")
    if not dir_str:
        dir_str, name = name, Path(name).name
    family_dir = Path(dir_str)
    paths = sorted(family_dir.glob("fold_*.ccmdl"))
    if not paths:
        raise SystemExit(f"no fold_*.ccmdl files in {family_dir}")
    loaded = [model.load_model(p) for p in paths]
    labels = loaded[0].labels
    for p, lm in zip(paths, loaded):
        if lm.labels != labels:
            raise SystemExit(f"label vocabulary mismatch within family {name} at {p}")
    if loaded[0].embedding_tag == "tfidf":
        source = _resolve_source("tfidf", model_dir=family_dir)
    else:
        if dense_path is None:
            candidate = family_dir / "embeddings.ccemb"
            if not candidate.exists():
                raise SystemExit(f"dense family {name}: pass --dense <path>")
            dense_path = candidate
        source = model.read_embedding_file(dense_path)
    return name, loaded, source


def cmd_evaluate(args) -> int:
    subsets = [("test", dataset.read_encounters(args.test))]
    if args.misspelling:
        subsets.append(("misspelling", dataset.read_encounters(args.misspelling)))

    folds = []
    for spec in args.models:
        name, loaded, source = _load_family_models(spec, args.dense)
        for subset_name, encounters in subsets:
            for i, lm in enumerate(loaded):
                vocab = dataset.LabelVocabulary(
                    lm.labels, {l: 0 for l in lm.labels}, min_count=1
                )
                probs = model.predict_proba(lm.params, source, encounters)
                targets = model.targets_matrix(encounters, vocab)
                if targets.sum() == 0:
                    raise SystemExit(
                        f"label mismatch: no {subset_name} encounter carries any of "
                        f"family {name}'s labels"
                    )
                folds.append(metrics.FoldMetrics(
                    family=name, subset=subset_name, fold=i,
                    pr_auc=metrics.micro_pr_auc(probs, targets),
                    roc_auc=metrics.micro_roc_auc(probs, targets),
                ))

    report = metrics.EvalReport(folds)
    text = report.render()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# query


def cmd_query(args) -> int:
    source = _resolve_source(args.embedding, model_path=Path(args.model))
    loaded = model.load_model(args.model)
    bundle = service.ModelBundle(loaded.params, loaded.labels, loaded.embedding_tag,
                                 source, model_id=Path(args.model).name)
    ranked = service.predict_ranked(bundle, args.text, args.age_group, args.sex,
                                    top_k=args.top_k)
    top = ranked[0][1] if ranked else 1.0
    width = 30
    for label, prob in ranked:
        bar = "#" * max(1, round(width * prob / top)) if top > 0 else ""
        print(f"{label:<30s} {prob:8.4f} {bar}")
    return 0


# ---------------------------------------------------------------------------
# cluster


def cmd_cluster(args) -> int:
    source = _resolve_source(args.embedding, model_path=Path(args.model))
    loaded = model.load_model(args.model)
    encounters = dataset.read_encounters(args.data)
    vocab = dataset.LabelVocabulary(loaded.labels, {l: 0 for l in loaded.labels}, 1)
    mean_cc = analysis.mean_cc_vectors(loaded.params, encounters, vocab, source)
    keep = mean_cc.support > 0
    if keep.sum() < 3 * args.perplexity + 1:
        raise SystemExit(
            f"perplexity {args.perplexity} infeasible for {int(keep.sum())} labels with support"
        )
    config = analysis.TsneConfig(perplexity=args.perplexity, n_iter=args.iterations,
                                 rng_seed=args.seed)
    result = analysis.tsne_project(mean_cc.rows[keep], config)
    coords = np.zeros((len(mean_cc.labels), 2))
    coords[keep] = result.coords
    analysis.export_projection(coords, mean_cc.labels, mean_cc.support, args.out)
    print(f"wrote {int(keep.sum())} projected labels to {args.out} "
          f"(final KL {result.kl_history[-1]:.4f})")
    return 0


# ---------------------------------------------------------------------------
# misspell


def cmd_misspell(args) -> int:
    config = dataset.MisspellConfig(rng_seed=args.seed, per_text_edits=args.edits)
    rng = Random(args.seed)
    texts = [args.text] if args.text else Path(args.infile).read_text("utf-8").splitlines()
    for text in texts:
        result = dataset.misspell(text, config, rng)
        if not result.changed:
            print(f"warning: no eligible word in {text!r}", file=sys.stderr)
        print(result.text)
    return 0


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args) -> int:
    embedding_path = None
    if args.embedding and ":" in args.embedding:
        embedding_path = args.embedding.split(":", 1)[1]
    service.serve(args.model, bind=args.bind, embedding_path=embedding_path)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cctriage",
        description="chief-complaint classification toolkit",
    )
    parser.add_argument("--config", help="JSON file supplying default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic raw dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-labels", type=int, default=20)
    p.add_argument("--n-encounters", type=int, default=1000)
    p.add_argument("--templates-per-label", type=int, default=6)
    p.add_argument("--misspelling-rate", type=float, default=0.0)
    p.add_argument("--co-label-rate", type=float, default=0.25)
    p.add_argument("--skew", help="JSON file: label -> 11 age-group weights")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="curate, split, and build the misspelling set")
    p.add_argument("--raw", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--test-fraction", type=float, default=0.15)
    p.add_argument("--min-count", type=int, default=50)
    p.add_argument("--misspell-fraction", type=float, default=0.15)
    p.add_argument("--misspell-edits", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="k-fold training, optionally over the hyperparameter grid")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--embedding", default="tfidf", help="tfidf or dense:<path>")
    p.add_argument("--hidden", type=int, default=500, choices=HIDDEN_GRID)
    p.add_argument("--dropout", type=float, default=0.3, choices=DROPOUT_GRID)
    p.add_argument("--grid", action="store_true",
                   help="train every hidden x dropout combination")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--max-vocab", type=int, default=text_pipeline.DEFAULT_MAX_VOCAB)
    p.add_argument("--max-df", type=float, default=text_pipeline.DEFAULT_MAX_DF)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-fold metrics, summaries, and t-tests")
    p.add_argument("--models", action="append", required=True,
                   help="family directory, optionally name=dir; repeatable")
    p.add_argument("--test", required=True)
    p.add_argument("--misspelling")
    p.add_argument("--dense", help="embedding file for dense families")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("query", help="rank labels for one text")
    p.add_argument("--model", required=True)
    p.add_argument("--embedding", help="tfidf:<path> or dense:<path>; default: autodiscover")
    p.add_argument("--age-group", type=int)
    p.add_argument("--sex", choices=dataset.SEXES)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("text")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("cluster", help="t-SNE projection of per-label mean predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="encounters to average over (test set)")
    p.add_argument("--embedding")
    p.add_argument("--out", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("misspell", help="perturb texts with single-character edits")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--in", dest="infile", help="file with one text per line")
    group.add_argument("text", nargs="?")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--edits", type=int, default=1)
    p.set_defaults(func=cmd_misspell)

    p = sub.add_parser("serve", help="HTTP inference service")
    p.add_argument("--model", required=True)
    p.add_argument("--embedding", help="tfidf:<path> or dense:<path>")
    p.add_argument("--bind", default="127.0.0.1:8377")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
