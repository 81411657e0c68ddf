"""Command line entry point: ingest, evaluate, verify, report, compare.

Exit codes: 0 success, 1 verification failure, 2 bad input, 3 partial run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from .adapters import AdapterError, ResponseCache
from .config import RunConfig, load_config
from .corpus import SegmentationSpec
from .metrics import compare
from .oracle import SyntheticSpec, default_verification_specs, verify_pooling
from .report import SLICE_DIMENSIONS, MissingArtifacts, load_run, write_report
from .runner import RunError, evaluate, ingest

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("pooleval")


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _load(args) -> RunConfig:
    path = Path(args.config)
    if not path.is_file():
        raise RunError(f"config file not found: {path}")
    cfg = load_config(path)
    update = {}
    if getattr(args, "seed", None) is not None:
        update["seed"] = args.seed
    if getattr(args, "max_inflight", None) is not None:
        update["max_inflight"] = args.max_inflight
    return cfg.model_copy(update=update) if update else cfg


def cmd_ingest(args) -> int:
    cfg = _load(args)
    summary = ingest(cfg, args.out or cfg.output_dir or "run")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    try:
        rep = evaluate(cfg, args.out, max_inflight=args.max_inflight, offline=args.offline)
    except AdapterError as exc:
        print(f"partial run: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    for rid, auc in rep.comparison.ranking:
        print(f"{rid:30s} PR-AUC {auc:.4f}")
    print(f"winners: {', '.join(rep.comparison.winners)}")
    print(f"judge calls: {rep.cost['judge_calls']} (cache hits {rep.cost['judge_cache_hits']}, "
          f"pooled {rep.cost['pooled_chunks']})")
    print(f"status: {rep.status}  digest: {rep.digest}")
    print(f"run directory: {rep.run_dir}")
    return rep.exit_code


def cmd_verify(args) -> int:
    synth = SyntheticSpec(seed=args.seed if args.seed is not None else 0, n_docs=args.n_docs,
                          n_queries=args.n_queries)
    seg = SegmentationSpec(args.segmentation)
    specs = default_verification_specs(args.k, seg)
    judge_cache = extract_cache = None
    if args.cache:
        cache = Path(args.cache)
        judge_cache = ResponseCache(cache / "judge.jsonl")
        extract_cache = ResponseCache(cache / "extract.jsonl")
    report = verify_pooling(specs, synth, args.k, judge_cache=judge_cache, extract_cache=extract_cache,
                            noisy_flip=args.noisy_flip, noise_seed=synth.seed,
                            max_inflight=args.max_inflight or 1)
    print(report.summary())
    if report.failing_queries:
        print("failing queries: " + " ".join(report.failing_queries))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report.to_record(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_report(args) -> int:
    written = write_report(args.run_dir, args.out, args.slice_by)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_compare(args) -> int:
    curves = []
    for run_dir in args.run_dirs:
        _, by_id = load_run(run_dir)
        for rid, curve in by_id.items():
            if len(args.run_dirs) > 1:
                curve.retriever_id = f"{Path(run_dir).name}:{rid}"
            curves.append(curve)
    if args.retrievers:
        wanted = set(args.retrievers)
        curves = [c for c in curves if c.retriever_id in wanted]
    if len(curves) < 2:
        return _fail("pooling requires ≥2 retrievers")
    cmp = compare(curves)
    rec = cmp.to_record()
    rec.pop("cost")
    text = json.dumps(rec, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pooleval", description="Pooled pseudo-ground-truth retriever evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, out_help):
        sp.add_argument("--config", required=True, help="run config (YAML or JSON)")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--max-inflight", type=int)

    sp = sub.add_parser("ingest", help="validate a corpus and dump chunkings")
    run_flags(sp, "output directory")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("evaluate", help="run every retriever, pool, judge and compare")
    run_flags(sp, "run directory")
    sp.add_argument("--offline", action="store_true", help="cache-only; forbid remote calls")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("verify", help="check pooled metrics against full ground truth on a synthetic corpus")
    sp.add_argument("--k", type=int, default=20)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-docs", type=int, default=SyntheticSpec.n_docs)
    sp.add_argument("--n-queries", type=int, default=SyntheticSpec.n_queries)
    sp.add_argument("--segmentation", choices=["original", "nms", "nmns"], default="nms")
    sp.add_argument("--cache", help="directory for judge/extractor caches")
    sp.add_argument("--noisy-flip", type=float, help="flip judge verdicts at this rate; report divergence only")
    sp.add_argument("--max-inflight", type=int)
    sp.add_argument("--out", help="write the full verification record here")
    sp.add_argument("--offline", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("report", help="curve tables and plots for a run directory")
    sp.add_argument("run_dir")
    sp.add_argument("--out")
    sp.add_argument("--slice-by", choices=sorted(SLICE_DIMENSIONS))
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("compare", help="rank and dominance across runs")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--retrievers", nargs="+")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RunError, MissingArtifacts, FileNotFoundError) as exc:
        return _fail(str(exc))
    except (ValidationError, ValueError) as exc:
        return _fail(f"invalid input: {exc}")


if __name__ == "__main__":
    sys.exit(main())
