"""Command-line front end.

Subcommands mirror the pipeline stages: gen-corpus, stage0 (scorer), score
(weight export), stage1 (head fine-tuning), eval, report, and pipeline (the
whole experiment). Stochastic stages require an explicit --seed; nothing
falls back to wall-clock entropy. Exit codes: 0 success, 1 bad input or
usage, 2 runtime failure (checksum mismatch, missing file, stage error).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .corpus import (
    CorruptionProfile,
    corpus_checksum,
    generate_corpus,
    load_corpus,
    save_corpus,
    train_eval_split,
)
from .finetune import (
    HeadConfig,
    load_head_snapshot,
    predict_all,
    save_head_snapshot,
    train_stage1,
    write_run_log,
)
from .metrics import compute_metrics
from .pipeline import (
    PipelineConfig,
    format_report_table,
    pipeline_config_from_dict,
    report_csv,
    run_pipeline,
)
from .qa import (
    QaConfig,
    WeightMapConfig,
    export_weights,
    load_qa_snapshot,
    load_weight_file,
    qa_checksum,
    save_qa_snapshot,
    train_stage0,
)
from .util import AugqualError, ValidationError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        raise _UsageError(message)


def _print_json(doc: dict) -> None:
    print(json.dumps(doc, indent=1, sort_keys=True))


def _load_json_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"bad JSON in {path}: {exc}") from exc


def _profile_from_args(args) -> CorruptionProfile:
    return CorruptionProfile(
        sigma_benign=args.sigma_benign, p_swap=args.p_swap,
        p_degrade=args.p_degrade, degrade_mask_rate=args.degrade_mask_rate,
        p_label_noise=args.p_label_noise)


def _add_profile_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sigma-benign", type=float, default=0.05)
    p.add_argument("--p-swap", type=float, default=0.0)
    p.add_argument("--p-degrade", type=float, default=0.0)
    p.add_argument("--degrade-mask-rate", type=float, default=0.5)
    p.add_argument("--p-label-noise", type=float, default=0.0)


def _cmd_gen_corpus(args) -> int:
    corpus = generate_corpus(
        args.n_originals, args.augments, _profile_from_args(args),
        seed=args.seed, d=args.d, d_t=args.d_t, vocab_size=args.vocab_size)
    save_corpus(corpus, args.out)
    doc = {"path": str(args.out), "n_samples": len(corpus),
           "n_originals": len(corpus.originals()),
           "checksum": corpus_checksum(corpus)}
    if args.json:
        _print_json(doc)
    else:
        print(f"wrote {doc['n_samples']} samples to {doc['path']} "
              f"(checksum {doc['checksum'][:12]})")
    return 0


def _parse_alpha(text: str):
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"bad --alpha: {exc}") from exc
    return parts


def _cmd_stage0(args) -> int:
    corpus = load_corpus(args.corpus)
    cfg = QaConfig(alpha=_parse_alpha(args.alpha), rho=args.rho,
                   batch_size=args.batch_size, steps=args.steps, lr=args.lr,
                   seed=args.seed, hidden=args.hidden,
                   include_augmented=args.include_augmented)
    params, trace = train_stage0(corpus, cfg)
    save_qa_snapshot(params, corpus.header, args.out)
    doc = {"snapshot": str(args.out), "qa_checksum": qa_checksum(params),
           "steps": len(trace),
           "final_loss": trace[-1] if trace else None}
    if args.json:
        _print_json(doc)
    else:
        loss = "n/a" if doc["final_loss"] is None else f"{doc['final_loss']:.4f}"
        print(f"scorer -> {doc['snapshot']} (final loss {loss})")
    return 0


def _cmd_score(args) -> int:
    corpus = load_corpus(args.corpus)
    params, header = load_qa_snapshot(args.qa)
    if (header.d, header.d_t) != (corpus.header.d, corpus.header.d_t):
        raise ValidationError("scorer was trained for different dimensions")
    cfg = WeightMapConfig(w_min=args.w_min, w_max=args.w_max, gamma=args.gamma)
    wf = export_weights(corpus, params, cfg, args.out)
    doc = {"path": str(args.out), "n_entries": len(wf.entries),
           "qa_checksum": wf.qa_checksum,
           "corpus_checksum": wf.corpus_checksum}
    if args.json:
        _print_json(doc)
    else:
        print(f"wrote {doc['n_entries']} weights to {doc['path']}")
    return 0


def _split_pool(corpus, which: str, eval_fraction: float):
    split = train_eval_split(corpus, eval_fraction)
    pools = {
        "all": split.train_originals + split.train_augments,
        "original": split.train_originals,
        "augmented": split.train_augments,
    }
    return pools[which], split


def _cmd_stage1(args) -> int:
    corpus = load_corpus(args.corpus)
    weight_file = None
    if args.weights is not None:
        weight_file = load_weight_file(args.weights)
    cfg = HeadConfig(hidden=args.hidden, t_max=args.t_max, lr=args.lr,
                     steps=args.steps, batch_size=args.batch_size,
                     seed=args.seed)
    pool, _ = _split_pool(corpus, args.pool, args.eval_fraction)
    run = train_stage1(corpus, weight_file, cfg, sample_ids=pool)
    save_head_snapshot(run.head, corpus.header.d, corpus.header.d_t, args.out)
    if args.run_log is not None:
        write_run_log(run.loss_trace, args.run_log)
    doc = {"head": str(args.out), "weight_mode": run.weight_mode,
           "pool_size": len(run.sample_ids),
           "final_loss": run.loss_trace[-1] if run.loss_trace else None}
    if args.json:
        _print_json(doc)
    else:
        print(f"head -> {doc['head']} ({doc['weight_mode']}, "
              f"{doc['pool_size']} samples)")
    return 0


def _cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    head, d, d_t = load_head_snapshot(args.head)
    if (d, d_t) != (corpus.header.d, corpus.header.d_t):
        raise ValidationError("head was trained for different dimensions")
    _, split = _split_pool(corpus, "all", args.eval_fraction)
    samples = [corpus.get(i) for i in split.eval_originals]
    if not samples:
        raise ValidationError("empty held-out set; raise eval_fraction")
    preds = predict_all(head, samples, d, corpus.header.verbal)
    gold = [s.sentiment for s in samples]
    metrics = compute_metrics(preds, gold)
    if args.json:
        _print_json(metrics)
    else:
        for key, value in metrics.items():
            print(f"{key:12s} {'n/a' if value is None else value}")
    return 0


def _cmd_report(args) -> int:
    report_path = Path(args.results) / "report.json"
    report = _load_json_file(report_path)
    if report.get("kind") != "pipeline_report":
        raise ValidationError(f"{report_path} is not a pipeline report")
    if args.dump_csv is not None:
        Path(args.dump_csv).write_text(report_csv(report), encoding="utf-8")
    if args.json:
        _print_json(report)
    else:
        print(format_report_table(report), end="")
    return 0


def _cmd_pipeline(args) -> int:
    if args.config is not None:
        cfg = pipeline_config_from_dict(_load_json_file(args.config))
    else:
        cfg = PipelineConfig()
    if args.seeds is not None:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(","))
        except ValueError as exc:
            raise ValidationError(f"bad --seeds: {exc}") from exc
        cfg = replace(cfg, seeds=seeds)
        cfg.validate()
    result = run_pipeline(cfg, args.out)
    if args.dump_csv is not None:
        Path(args.dump_csv).write_text(report_csv(result.report),
                                       encoding="utf-8")
    if args.json:
        _print_json(result.report)
    else:
        print(format_report_table(result.report), end="")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="augqual",
                     description="Quality-weighted training over augmented "
                                 "multimodal feature corpora.")
    parser.add_argument("--version", action="version",
                        version=f"augqual {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-originals", type=int, default=200)
    p.add_argument("--augments", type=int, default=2)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--d-t", type=int, default=96)
    p.add_argument("--vocab-size", type=int, default=8)
    _add_profile_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("stage0", help="train the quality scorer")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--alpha", default="3,2,2,1",
                   help="family loss weights: pos,mix,mask,flip")
    p.add_argument("--rho", type=float, default=0.3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--steps", type=int, default=800)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--include-augmented", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_stage0)

    p = sub.add_parser("score", help="export per-sample weights")
    p.add_argument("--corpus", required=True)
    p.add_argument("--qa", required=True, help="scorer snapshot path")
    p.add_argument("--out", required=True)
    p.add_argument("--w-min", type=float, default=0.1)
    p.add_argument("--w-max", type=float, default=1.5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("stage1", help="fine-tune the surrogate head")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--weights", help="weight file; omit for uniform")
    p.add_argument("--pool", choices=("all", "original", "augmented"),
                   default="all")
    p.add_argument("--eval-fraction", type=float, default=0.25)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--t-max", type=int, default=4)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--run-log", help="write per-step losses as JSONL")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_stage1)

    p = sub.add_parser("eval", help="evaluate a head on held-out originals")
    p.add_argument("--corpus", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--eval-fraction", type=float, default=0.25)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render a pipeline report")
    p.add_argument("--results", required=True, help="pipeline output directory")
    p.add_argument("--dump-csv", help="also write per-seed rows as CSV")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("pipeline", help="run the full experiment")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config document")
    p.add_argument("--seeds", help="comma-separated override, e.g. 1,2,3")
    p.add_argument("--dump-csv", help="also write per-seed rows as CSV")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(parser.format_usage(), end="", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AugqualError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
