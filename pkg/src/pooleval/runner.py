"""End-to-end evaluation runs and the run-directory layout.

A run directory holds::

    config.json              snapshot of the validated config
    chunks/<seg>.jsonl       chunk dumps per segmentation
    runs/<retriever>.jsonl   final ranked lists
    pools.jsonl              pooled subsets with contributors
    judgments.jsonl          relevance verdicts (audit export)
    extractions.jsonl        extracted facts (audit export)
    pseudo_gt.jsonl          relevant chunks and canonical facts per query
    curves/<retriever>.csv   cutoff_k, precision, recall
    report.json              PR-AUC table, dominance matrix, cost report, digest
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .adapters import AdapterError, RemoteAdapter, ResponseCache
from .config import AdapterConfig, RunConfig
from .corpus import dump_chunks, load_corpus, load_queries, write_jsonl
from .embedding import EmbedderRegistry, HashingEmbedder, RemoteEmbedder
from .index import RankedList
from .judge import Extractor, Judge, LLMExtractor, LLMJudge, NoisyJudge, OracleExtractor, OracleJudge
from .metrics import ComparisonReport, compare, pr_curve
from .pipeline import (LexicalListwise, LexicalScorer, LLMRewriter, RemoteListwise, RemotePointwiseScorer,
                       TemplateRewriter, Workspace, run_retriever)
from .pseudogt import CoverageIndex, build_pseudo_gt, build_subset

logger = logging.getLogger(__name__)


class RunError(Exception):
    """Unrecoverable problem with the run inputs (maps to exit code 2)."""


@dataclass
class RunReport:
    run_dir: Path
    digest: str
    config_digest: str
    status: str
    comparison: ComparisonReport
    cost: dict

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "complete" else 3


def _file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Adapters:
    """Builds judges, extractors and retrieval adapters from config."""

    def __init__(self, config: RunConfig, cache_dir: Path, *, offline: bool = False):
        self.config = config
        self.cache_dir = cache_dir
        self.offline = offline
        self._remotes: list[RemoteAdapter] = []

    def remote(self, cfg: AdapterConfig, cache_name: str | None) -> RemoteAdapter:
        cache = ResponseCache(self.cache_dir / f"{cache_name}.jsonl") if cache_name else None
        adapter = RemoteAdapter(cfg.endpoint, cfg.model, prompt_version=cfg.prompt_version, timeout=cfg.timeout,
                                retries=cfg.retries, max_inflight=cfg.max_inflight, cache=cache,
                                offline=self.offline)
        self._remotes.append(adapter)
        return adapter

    def judge(self) -> Judge:
        cfg = self.config.adapters.judge
        cache = ResponseCache(self.cache_dir / "judge.jsonl")
        if cfg.type == "remote":
            return LLMJudge(self.remote(cfg, None), cache)
        if cfg.type != "oracle":
            raise RunError(f"judge type {cfg.type!r} is not supported")
        judge: Judge = OracleJudge(cache, prompt_version=cfg.prompt_version)
        if cfg.flip:
            judge = NoisyJudge(judge, cfg.flip, self.config.seed, cache)
        return judge

    def extractor(self) -> Extractor:
        cfg = self.config.adapters.extractor
        cache = ResponseCache(self.cache_dir / "extract.jsonl")
        if cfg.type == "remote":
            return LLMExtractor(self.remote(cfg, None), cache)
        if cfg.type != "oracle":
            raise RunError(f"extractor type {cfg.type!r} is not supported")
        return OracleExtractor(cache, prompt_version=cfg.prompt_version)

    def workspace(self, documents) -> Workspace:
        ad = self.config.adapters
        embedders = EmbedderRegistry()
        for eid, cfg in ad.embedders.items():
            if cfg.type == "remote":
                embedders.register(RemoteEmbedder(eid, self.remote(cfg, "embed"), cfg.dim))
            elif cfg.type == "hashing":
                embedders.register(HashingEmbedder(cfg.dim or 256, salt=eid, embedder_id=eid))
            else:
                raise RunError(f"embedder type {cfg.type!r} is not supported")
        rewriter = LLMRewriter(self.remote(ad.rewriter, "rewrite")) if ad.rewriter.type == "remote" \
            else TemplateRewriter()
        scorer = RemotePointwiseScorer(self.remote(ad.pointwise, "rerank")) if ad.pointwise.type == "remote" \
            else LexicalScorer()
        listwise = RemoteListwise(self.remote(ad.listwise, "rerank")) if ad.listwise.type == "remote" \
            else LexicalListwise()
        return Workspace(documents, embedders=embedders, rewriter=rewriter, scorer=scorer, listwise=listwise)

    def close(self) -> None:
        for r in self._remotes:
            r.close()


def _report_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def evaluate(config: RunConfig, out_dir: str | Path | None = None, *, max_inflight: int | None = None,
             offline: bool = False) -> RunReport:
    """ingest -> segment -> index -> retrieve -> pool -> judge -> pseudo GT -> metrics -> compare."""
    started = time.perf_counter()
    out = Path(out_dir or config.output_dir or "run")
    workers = max_inflight or config.max_inflight
    specs = config.specs()
    if len(specs) < 2:
        raise RunError("pooling requires ≥2 retrievers")
    for p in (config.corpus, config.queries):
        if not Path(p).is_file():
            raise RunError(f"missing input file: {p}")

    documents = load_corpus(config.corpus)
    queries = load_queries(config.queries)
    if not queries:
        raise RunError("no queries")
    out.mkdir(parents=True, exist_ok=True)
    for sub in ("chunks", "runs", "curves"):
        (out / sub).mkdir(exist_ok=True)
    cache_dir = Path(config.cache_dir) if config.cache_dir else out / "cache"
    (out / "config.json").write_text(json.dumps(config.model_dump(), indent=2, sort_keys=True) + "\n")

    adapters = Adapters(config, cache_dir, offline=offline)
    try:
        ws = adapters.workspace(documents)
        n_chunks = {}
        for seg in sorted({s.segmentation for s in specs}, key=lambda s: s.id):
            idx = ws.index(seg)
            n_chunks[seg.id] = len(idx.chunks)
            dump_chunks(out / "chunks" / f"{seg.id}.jsonl", idx.chunks)

        pairs = [(s, q) for s in specs for q in queries]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            lists = list(ex.map(lambda sq: run_retriever(sq[0], sq[1], ws), pairs))
        results: dict[str, dict[str, RankedList]] = {s.id: {} for s in specs}
        for (s, q), ranked in zip(pairs, lists):
            results[s.id][q.id] = ranked
        for s in specs:
            write_jsonl(out / "runs" / f"{s.id}.jsonl", (results[s.id][q.id].to_record() for q in queries))

        judge, extractor = adapters.judge(), adapters.extractor()
        hits_before = judge.cache.hits
        gts, pools = {}, {}
        for q in queries:
            pool = build_subset(q.id, [results[s.id][q.id] for s in specs])
            pools[q.id] = pool
            gts[q.id] = build_pseudo_gt(pool, judge, extractor, q, ws.chunks, workers)
    except AdapterError as exc:
        logger.error("aborting run after adapter failure: %s", exc)
        adapters.close()
        report = {"status": "partial", "error": str(exc), "config_digest": config.digest()}
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        raise
    adapters.close()

    write_jsonl(out / "pools.jsonl", ({"query_id": q.id, "chunk_ids": sorted(pools[q.id].chunk_ids),
                                       "contributors": {c: sorted(r) for c, r in
                                                        sorted(pools[q.id].contributors.items())}}
                                      for q in queries))
    write_jsonl(out / "judgments.jsonl", (j.to_record() for q in queries for j in gts[q.id].judgments))
    write_jsonl(out / "extractions.jsonl", (e.to_record() for q in queries for e in gts[q.id].extractions))
    write_jsonl(out / "pseudo_gt.jsonl", (gts[q.id].to_record() for q in queries))

    coverage = CoverageIndex(ws.chunks)
    curves = []
    for s in specs:
        curve = pr_curve(results[s.id], gts, config.k_max, coverage, retriever_id=s.id)
        curve.to_csv(out / "curves" / f"{s.id}.csv")
        curves.append(curve)

    status = "partial" if any(g.partial for g in gts.values()) else "complete"
    m = len(queries)
    pool_sizes = {q.id: pools[q.id].size for q in queries}
    cost = {
        "queries": m,
        "judge_calls": judge.calls,
        "extractor_calls": extractor.calls,
        "judge_cache_hits": judge.cache.hits - hits_before,
        "pooled_chunks": sum(pool_sizes.values()),
        "pool_sizes": pool_sizes,
        "sum_k": sum(s.k for s in specs),
        "per_retriever_cost": {s.id: m * s.k for s in specs},
        "full_judging_cost": {sid: m * n for sid, n in n_chunks.items()},
        "unjudged": sum(len(g.unjudged) for g in gts.values()),
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    comparison = compare(curves, cost)

    deterministic = {
        "config_digest": config.digest(),
        "corpus_digest": _file_digest(config.corpus),
        "queries_digest": _file_digest(config.queries),
        "status": status,
        "pr_auc": comparison.to_record()["pr_auc"],
        "winners": comparison.winners,
        "dominance": comparison.dominance,
        "curves": {c.retriever_id: [[p.cutoff_k, p.precision, p.recall] for p in c.points] for c in curves},
        "pseudo_gt": [gts[q.id].to_record() for q in queries],
        "pool_sizes": pool_sizes,
    }
    digest = _report_digest(deterministic)
    report = {
        "digest": digest,
        "config_digest": deterministic["config_digest"],
        "status": status,
        **comparison.to_record(),
        "retrievers": [s.to_record() for s in specs],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return RunReport(out, digest, deterministic["config_digest"], status, comparison, cost)


def ingest(config: RunConfig, out_dir: str | Path) -> dict:
    """Validate the corpus and write chunk dumps for every configured segmentation."""
    if not Path(config.corpus).is_file():
        raise RunError(f"missing input file: {config.corpus}")
    out = Path(out_dir)
    (out / "chunks").mkdir(parents=True, exist_ok=True)
    documents = load_corpus(config.corpus)
    ws = Workspace(documents)
    summary = {"documents": len(documents), "segmentations": {}}
    for seg in sorted({s.segmentation for s in config.specs()}, key=lambda s: s.id):
        idx = ws.index(seg)
        dump_chunks(out / "chunks" / f"{seg.id}.jsonl", idx.chunks)
        summary["segmentations"][seg.id] = len(idx.chunks)
    summary["poi_quartiles"] = [ws.poi_stats.threshold(f) for f in (0.25, 0.5, 0.75)]
    (out / "ingest.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
