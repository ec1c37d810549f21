"""Command-line entry points for reproducible pipeline runs.

Every subcommand is a pure function of its inputs plus the seed: defaults
come from the built-in RunConfig, a JSON config file (--config) may replace
any field, and command-line flags override both. The effective
configuration is echoed to the run log so results can be traced back.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import baseline, metrics, tensor, training
from .corpus import (
    Candidate,
    DialogueExample,
    RankingGroup,
    build_vocabulary,
    compute_stats,
    format_stats,
    load_vocabulary,
    parse_pair_file,
    parse_ranking_file,
    save_vocabulary,
    tokenize,
)
from .embed import combine_embeddings, coverage, format_coverage, load_table, load_vectors, save_table
from .esim import (
    EsimConfig,
    build_embedding_matrix,
    load_checkpoint,
    score_probs,
    token_signal_strength,
)
from .metrics import evaluate, format_report, paired_report
from .word2vec import Word2vecConfig, train_word2vec

_CORPUS_DEFAULTS = {
    "fmt": "csv-triple",
    "has_header": False,
    "lowercase": True,
    "strip_tags": False,
    "min_count": 1,
    "ranking_mode": "line",
    "ranking_fmt": "csv",
    "n_candidates": 10,
}
_METRICS_DEFAULTS = {"filter_degenerate": False}


def _dataclass_defaults(cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            out[f.name] = f.default_factory()  # type: ignore[misc]
    return out


def default_run_config() -> dict:
    """Every configurable field with its default value."""
    return {
        "seed": 0,
        "corpus": dict(_CORPUS_DEFAULTS),
        "word2vec": _dataclass_defaults(Word2vecConfig),
        "esim": _dataclass_defaults(EsimConfig, skip=("word_dim",)),
        "metrics": dict(_METRICS_DEFAULTS),
    }


def load_run_config(path=None) -> dict:
    """Defaults, with any sections/fields replaced from a JSON config file."""
    config = default_run_config()
    if path is None:
        return config
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    for section, values in data.items():
        if section == "seed":
            config["seed"] = int(values)
            continue
        if section not in config or not isinstance(config[section], dict):
            raise ValueError(f"{path}: unknown config section {section!r}")
        for key, value in values.items():
            if key not in config[section]:
                raise ValueError(f"{path}: unknown config field {section}.{key}")
            config[section][key] = value
    return config


def _apply_overrides(section: dict, args: argparse.Namespace, names: dict[str, str]) -> None:
    for field, attr in names.items():
        value = getattr(args, attr, None)
        if value is not None:
            section[field] = value


def _echo_config(config: dict, log_fh=None) -> None:
    line = "config " + json.dumps(config, sort_keys=True)
    print(line)
    if log_fh is not None:
        log_fh.write(line + "\n")


def _parse_pairs(args, corpus_cfg: dict):
    return parse_pair_file(
        args.pairs,
        fmt=corpus_cfg["fmt"],
        has_header=corpus_cfg["has_header"],
        lowercase=corpus_cfg["lowercase"],
        strip_tags=corpus_cfg["strip_tags"],
    )


def _parse_ranking(path, corpus_cfg: dict, strip_tags: bool | None = None):
    return parse_ranking_file(
        path,
        mode=corpus_cfg["ranking_mode"],
        fmt=corpus_cfg["ranking_fmt"],
        n_candidates=corpus_cfg["n_candidates"],
        has_header=corpus_cfg["has_header"],
        lowercase=corpus_cfg["lowercase"],
        strip_tags=corpus_cfg["strip_tags"] if strip_tags is None else strip_tags,
    )


# ---------------------------------------------------------------------------
# subcommands


def _cmd_stats(args) -> int:
    run = load_run_config(args.config)
    _apply_overrides(run["corpus"], args, {"fmt": "fmt", "has_header": "has_header", "strip_tags": "strip_tags"})
    _echo_config(run)
    stats = compute_stats(_parse_pairs(args, run["corpus"]))
    print(format_stats(stats))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(stats.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _cmd_train_w2v(args) -> int:
    run = load_run_config(args.config)
    _apply_overrides(run["corpus"], args, {"fmt": "fmt", "has_header": "has_header"})
    _apply_overrides(
        run["word2vec"],
        args,
        {
            "dim": "dim",
            "window": "window",
            "negatives": "negatives",
            "epochs": "epochs",
            "min_count": "min_count",
            "initial_lr": "lr",
            "subsample": "subsample",
            "seed": "seed",
        },
    )
    _echo_config(run)
    config = Word2vecConfig(**run["word2vec"])
    sentences = []
    for ex in _parse_pairs(args, run["corpus"]):
        sentences.append(ex.context)
        sentences.append(ex.response)
    table = train_word2vec(sentences, config)
    save_table(table, args.out)
    print(f"trained {len(table)} vectors of dim {table.dim} -> {args.out}")
    return 0


def _cmd_combine(args) -> int:
    pretrained = load_vectors(args.pretrained, fmt=args.pretrained_fmt)
    trained = load_table(args.trained, provenance="trained")
    vocab = load_vocabulary(args.vocab)
    combined = combine_embeddings(pretrained, trained, vocab)
    save_table(combined, args.out)
    print(f"combined table: {len(combined)} tokens, dim {combined.dim} -> {args.out}")
    return 0


def _cmd_coverage(args) -> int:
    run = load_run_config(args.config)
    _apply_overrides(run["corpus"], args, {"fmt": "fmt", "has_header": "has_header"})
    _echo_config(run)
    table = load_vectors(args.table, fmt=args.table_fmt)
    report = coverage(table, _parse_pairs(args, run["corpus"]))
    print(format_coverage(report))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(dataclasses.asdict(report), sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _cmd_train(args) -> int:
    tensor.set_default_dtype(np.float32)
    run = load_run_config(args.config)
    _apply_overrides(
        run["corpus"],
        args,
        {
            "fmt": "fmt",
            "has_header": "has_header",
            "min_count": "min_count",
            "ranking_mode": "ranking_mode",
            "ranking_fmt": "ranking_fmt",
            "n_candidates": "n_candidates",
        },
    )
    _apply_overrides(
        run["esim"],
        args,
        {
            "char_hidden": "char_hidden",
            "ctx_hidden": "ctx_hidden",
            "mlp_hidden": "mlp_hidden",
            "batch_size": "batch_size",
            "initial_lr": "lr",
            "lr_decay_rate": "lr_decay_rate",
            "lr_decay_steps": "lr_decay_steps",
            "max_context": "max_context",
            "max_response": "max_response",
            "epochs": "epochs",
            "max_steps": "max_steps",
            "clip_norm": "clip_norm",
            "seed": "seed",
        },
    )
    if args.trainable_word_embeddings:
        run["esim"]["trainable_word_embeddings"] = True

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    examples = list(_parse_pairs(args, run["corpus"]))
    table = load_table(args.table, provenance="combined")
    vocab = load_vocabulary(args.vocab) if args.vocab else build_vocabulary(examples, run["corpus"]["min_count"])
    if not args.vocab:
        save_vocabulary(vocab, out_dir / "vocab.tsv")
    config = EsimConfig(word_dim=table.dim, **run["esim"])
    embedding_matrix = build_embedding_matrix(vocab, table)
    valid = list(_parse_ranking(args.valid, run["corpus"])) if args.valid else []

    checkpoint_path = out_dir / "model.ckpt"
    with open(out_dir / "training.log", "w", encoding="utf-8") as log_fh:
        _echo_config(run, log_fh)
        params, log = training.train(
            examples, valid, config, vocab, embedding_matrix,
            checkpoint_path=checkpoint_path, log_fh=log_fh,
        )
    last = log[-1] if log else None
    best = max((e.valid_r1 for e in log if e.valid_r1 is not None), default=None)
    print(f"steps: {len(log)}  final loss: {last.loss if last else float('nan'):.4f}  best valid R@1: {best}")
    print(f"checkpoint: {checkpoint_path}")
    return 0


def _load_models(args):
    paths = []
    if args.ensemble:
        paths = [p for p in args.ensemble.split(",") if p]
    elif args.checkpoint:
        paths = [args.checkpoint]
    if not paths:
        raise ValueError("need --checkpoint or --ensemble (or --from-scores)")
    params_list = []
    config = vocab = None
    for path in paths:
        params, ck_config, ck_vocab = load_checkpoint(path)
        if config is None:
            config, vocab = ck_config, ck_vocab
        elif ck_config.word_dim != config.word_dim or len(ck_vocab) != len(vocab):
            raise ValueError(f"{path}: ensemble members disagree on vocabulary/embedding size")
        params_list.append(params)
    return params_list, config, vocab


def _read_scores(path) -> list[list[float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split()])
    return rows


def _write_scores(path, scores: list[list[float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in scores:
            fh.write(" ".join(repr(float(s)) for s in row) + "\n")


def _cmd_eval(args) -> int:
    tensor.set_default_dtype(np.float32)
    run = load_run_config(args.config)
    _apply_overrides(
        run["corpus"],
        args,
        {"ranking_mode": "ranking_mode", "ranking_fmt": "ranking_fmt", "n_candidates": "n_candidates", "has_header": "has_header"},
    )
    if args.strip_tags:
        run["corpus"]["strip_tags"] = True
    if args.filter_degenerate:
        run["metrics"]["filter_degenerate"] = True
    _echo_config(run)

    groups = list(_parse_ranking(args.ranking, run["corpus"]))
    if args.from_scores:
        scores = _read_scores(args.from_scores)
        if len(scores) != len(groups):
            raise ValueError(f"{args.from_scores}: {len(scores)} score rows for {len(groups)} groups")
    else:
        params_list, config, vocab = _load_models(args)
        scores = [
            np.mean([score_probs(p, g, vocab, config) for p in params_list], axis=0).tolist() for g in groups
        ]
    if args.save_scores:
        _write_scores(args.save_scores, scores)
    report = evaluate(zip(groups, scores), filter_degenerate=run["metrics"]["filter_degenerate"])
    print(format_report(report))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(report.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _cmd_rank(args) -> int:
    tensor.set_default_dtype(np.float32)
    params, config, vocab = load_checkpoint(args.checkpoint)
    context = tuple(tokenize(args.context, lowercase=not args.no_lowercase))
    if not context:
        raise ValueError("empty context")
    candidates = []
    with open(args.candidates, encoding="utf-8") as fh:
        for line in fh:
            toks = tokenize(line, lowercase=not args.no_lowercase)
            if toks:
                candidates.append(tuple(toks))
    if len(candidates) < 2:
        raise ValueError(f"{args.candidates}: need at least 2 candidate lines")
    group = RankingGroup(context, tuple(Candidate(c, 0) for c in candidates))
    probs = score_probs(params, group, vocab, config)
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    for rank, i in enumerate(order, 1):
        print(f"{rank}\t{probs[i]:.6f}\t{' '.join(candidates[i])}")
    return 0


def _cmd_explain(args) -> int:
    tensor.set_default_dtype(np.float32)
    params, config, vocab = load_checkpoint(args.checkpoint)
    context = tuple(tokenize(args.context, lowercase=not args.no_lowercase))
    response = tuple(tokenize(args.response, lowercase=not args.no_lowercase))
    if not context or not response:
        raise ValueError("context and response must both be non-empty")
    example = DialogueExample(context, response, 1)
    report = token_signal_strength(params, example, vocab, config)
    print("context:", " ".join(context))
    print("top context tokens:", " ".join(f"{t}({s:.3f})" for t, s in report.context[: args.top_k]))
    print("response:", " ".join(response))
    print("top response tokens:", " ".join(f"{t}({s:.3f})" for t, s in report.response[: args.top_k]))
    return 0


def _cmd_baseline_eval(args) -> int:
    run = load_run_config(args.config)
    _apply_overrides(
        run["corpus"],
        args,
        {"ranking_mode": "ranking_mode", "ranking_fmt": "ranking_fmt", "n_candidates": "n_candidates", "has_header": "has_header"},
    )
    if args.strip_tags:
        run["corpus"]["strip_tags"] = True
    if args.filter_degenerate:
        run["metrics"]["filter_degenerate"] = True
    _echo_config(run)

    groups = list(_parse_ranking(args.ranking, run["corpus"]))
    table_a = load_table(args.table)
    report_a = evaluate(
        ((g, baseline.score_group(g, table_a)) for g in groups),
        filter_degenerate=run["metrics"]["filter_degenerate"],
    )
    print(f"table: {args.table}")
    print(format_report(report_a))
    if args.compare_table:
        table_b = load_table(args.compare_table)
        report_b = evaluate(
            ((g, baseline.score_group(g, table_b)) for g in groups),
            filter_degenerate=run["metrics"]["filter_degenerate"],
        )
        print(f"compare table: {args.compare_table}")
        print(format_report(report_b))
        print("delta (compare - base):")
        print(str(paired_report(report_a, report_b)))
        if args.csv_out:
            with open(args.csv_out, "w", encoding="utf-8") as fh:
                fh.write("metric,base,compare\n")
                for name in metrics.METRIC_FIELDS:
                    fh.write(f"{name},{getattr(report_a, name):.6f},{getattr(report_b, name):.6f}\n")
    elif args.csv_out:
        with open(args.csv_out, "w", encoding="utf-8") as fh:
            fh.write("metric,base\n")
            for name in metrics.METRIC_FIELDS:
                fh.write(f"{name},{getattr(report_a, name):.6f}\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_pairs_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pairs", required=True, help="CSV/TSV file of (context, response, label) triples")
    p.add_argument("--fmt", choices=["csv-triple", "tsv-triple"], default=None, help="pair file format")
    p.add_argument("--has-header", action="store_true", default=None, help="skip the first record")


def _add_ranking_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ranking", required=True, help="candidate file to evaluate")
    p.add_argument("--ranking-mode", choices=["line", "triples"], default=None)
    p.add_argument("--ranking-fmt", choices=["csv", "tsv"], default=None)
    p.add_argument("--n-candidates", type=int, default=None, help="group size in triples mode")
    p.add_argument("--has-header", action="store_true", default=None)
    p.add_argument("--filter-degenerate", action="store_true", help="skip all-positive/all-negative groups")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialrank", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("stats", help="corpus statistics report")
    _add_pairs_flags(p)
    p.add_argument("--strip-tags", action="store_true", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train-w2v", help="train skip-gram vectors on the task corpus")
    _add_pairs_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--negatives", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--subsample", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_train_w2v)

    p = sub.add_parser("combine", help="concatenate pretrained and task-trained vectors")
    p.add_argument("--pretrained", required=True)
    p.add_argument("--pretrained-fmt", choices=["glove-text", "word2vec-text"], default="glove-text")
    p.add_argument("--trained", required=True, help="word2vec-text table from train-w2v")
    p.add_argument("--vocab", required=True, help="task vocabulary (token<TAB>count lines)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_combine)

    p = sub.add_parser("coverage", help="vocabulary coverage of a vector table")
    _add_pairs_flags(p)
    p.add_argument("--table", required=True)
    p.add_argument("--table-fmt", choices=["glove-text", "word2vec-text"], default="glove-text")
    p.add_argument("--config", default=None)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_coverage)

    p = sub.add_parser("train", help="train the ranker")
    _add_pairs_flags(p)
    p.add_argument("--table", required=True, help="combined embedding table (word2vec-text)")
    p.add_argument("--vocab", default=None, help="vocabulary file; built from --pairs when omitted")
    p.add_argument("--valid", default=None, help="ranking file for half-epoch validation")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--ranking-mode", choices=["line", "triples"], default=None)
    p.add_argument("--ranking-fmt", choices=["csv", "tsv"], default=None)
    p.add_argument("--n-candidates", type=int, default=None)
    p.add_argument("--char-hidden", type=int, default=None)
    p.add_argument("--ctx-hidden", type=int, default=None)
    p.add_argument("--mlp-hidden", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-decay-rate", type=float, default=None)
    p.add_argument("--lr-decay-steps", type=int, default=None)
    p.add_argument("--max-context", type=int, default=None)
    p.add_argument("--max-response", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--trainable-word-embeddings", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a ranking file and report metrics")
    _add_ranking_flags(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--ensemble", default=None, help="comma-separated checkpoints; mean of member probabilities")
    p.add_argument("--strip-tags", action="store_true", help="drop __eou__/__eot__ from inputs before scoring")
    p.add_argument("--save-scores", default=None)
    p.add_argument("--from-scores", default=None, help="reuse saved scores instead of a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("rank", help="rank candidate responses for one context")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--candidates", required=True, help="file with one candidate response per line")
    p.add_argument("--no-lowercase", action="store_true")
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("explain", help="token signal strengths for one pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--top-k", type=int, default=6)
    p.add_argument("--no-lowercase", action="store_true")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("baseline-eval", help="average-vector cosine baseline metrics")
    _add_ranking_flags(p)
    p.add_argument("--table", required=True, help="word2vec-text table")
    p.add_argument("--compare-table", default=None, help="second table for a side-by-side report")
    p.add_argument("--strip-tags", action="store_true")
    p.add_argument("--csv-out", default=None, help="plot-ready CSV of the comparison")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_baseline_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
