"""Retriever specs and the rewrite -> recall -> filter -> rerank -> truncate pipeline."""

from __future__ import annotations

import logging
import math
import re
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .adapters import RemoteAdapter
from .corpus import Chunk, Document, PoiPercentiles, Query, SegmentationSpec, segment_corpus
from .embedding import EmbedderRegistry
from .index import BM25Index, DenseIndex, RankedList
from .text import tokenize

logger = logging.getLogger(__name__)

RRF_CONSTANT = 60
N_REWRITES = 4
REWRITE_DEPTH = 10


@dataclass(frozen=True)
class FilterSpec:
    quality: bool = False
    length: bool = False
    length_threshold: int = 50
    engagement: bool = False
    engagement_threshold: int = 25
    poi: bool = False
    poi_bottom_fraction: float = 0.25

    def __post_init__(self):
        if self.length_threshold < 0 or self.engagement_threshold < 0:
            raise ValueError("filter thresholds must be >= 0")
        if not 0 < self.poi_bottom_fraction < 1:
            raise ValueError("poi_bottom_fraction must be in (0, 1)")

    @property
    def any_enabled(self) -> bool:
        return self.quality or self.length or self.engagement or self.poi


@dataclass(frozen=True)
class RerankerSpec:
    kind: str = "none"
    window: int = 20
    overlap: int = 10

    def __post_init__(self):
        if self.kind not in ("none", "pointwise", "sliding_window"):
            raise ValueError(f"unknown reranker kind {self.kind!r}")
        if self.kind == "sliding_window" and not 0 < self.overlap < self.window:
            raise ValueError("sliding window needs 0 < overlap < window")


@dataclass(frozen=True)
class RetrieverSpec:
    id: str
    segmentation: SegmentationSpec = field(default_factory=SegmentationSpec)
    mode: str = "dense"
    embedder_id: str = "hash-256"
    k: int = 20
    rewriter: str = "off"
    filter: FilterSpec = field(default_factory=FilterSpec)
    reranker: RerankerSpec = field(default_factory=RerankerSpec)
    pool_multiplier: int = 4

    def __post_init__(self):
        if self.mode not in ("dense", "hybrid"):
            raise ValueError(f"unknown retrieval mode {self.mode!r}")
        if self.rewriter not in ("off", "on"):
            raise ValueError("rewriter must be 'on' or 'off'")
        if self.k < 1 or self.pool_multiplier < 1:
            raise ValueError("k and pool_multiplier must be >= 1")

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "RetrieverSpec":
        rec = dict(rec)
        rec["segmentation"] = SegmentationSpec(**rec.get("segmentation", {}))
        rec["filter"] = FilterSpec(**rec.get("filter", {}))
        rec["reranker"] = RerankerSpec(**rec.get("reranker", {}))
        return cls(**rec)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


# --- fusion -----------------------------------------------------------------

def hybrid_fuse(dense: RankedList, sparse: RankedList, k: int) -> RankedList:
    """Reciprocal-rank fusion with constant 60."""
    if dense.query_id != sparse.query_id:
        raise ValueError(f"query mismatch: {dense.query_id!r} vs {sparse.query_id!r}")
    fused: dict[str, float] = {}
    for ranked in (dense, sparse):
        for e in ranked:
            fused[e.chunk_id] = fused.get(e.chunk_id, 0.0) + 1.0 / (RRF_CONSTANT + e.rank)
    return RankedList.from_scores(dense.query_id, dense.retriever_id, fused.items(), k)


def merge_best_rank(lists: Sequence[RankedList]) -> RankedList:
    """Union of several lists ranked by each chunk's best rank (score 1/best_rank)."""
    best: dict[str, int] = {}
    for ranked in lists:
        for e in ranked:
            best[e.chunk_id] = min(best.get(e.chunk_id, e.rank), e.rank)
    head = lists[0]
    return RankedList.from_scores(head.query_id, head.retriever_id,
                                  ((cid, 1.0 / r) for cid, r in best.items()))


# --- query rewriting ----------------------------------------------------------

class Rewriter(Protocol):
    def rewrites(self, query: str) -> list[str]: ...


class TemplateRewriter:
    """Deterministic expansions that keep every original word."""

    templates = (
        "what is the {q}",
        "{q} details",
        "how does {q} work",
        "{q} rules and requirements",
    )

    def rewrites(self, query: str) -> list[str]:
        return [t.format(q=query) for t in self.templates]


class LLMRewriter:
    prompt = ("Rewrite the search query below into {n} different queries with the same intent. "
              "Return one query per line.\n\nQuery: {query}")

    def __init__(self, adapter: RemoteAdapter):
        self.adapter = adapter

    def rewrites(self, query: str) -> list[str]:
        (out,) = self.adapter.call("rewrite", [self.prompt.format(n=N_REWRITES, query=query)])
        if isinstance(out, str):
            out = out.splitlines()
        return [re.sub(r"^\s*(?:\d+[.)]|[-*])\s*", "", str(s)).strip() for s in out]


def rewrite_query(query: str, rewriter: Rewriter) -> list[str]:
    """Exactly four distinct non-empty rewrites; shortfalls are padded with the original."""
    seen = {query.strip()}
    out = []
    for r in rewriter.rewrites(query):
        r = r.strip()
        if r and r not in seen:
            seen.add(r)
            out.append(r)
    out = out[:N_REWRITES]
    if len(out) < N_REWRITES:
        logger.warning("rewriter returned %d usable rewrites for %r; padding with the original",
                       len(out), query)
        out += [query] * (N_REWRITES - len(out))
    return out


# --- filters ------------------------------------------------------------------

def failing_filters(meta: Mapping, spec: FilterSpec, poi_stats: PoiPercentiles) -> list[str]:
    failed = []
    if spec.quality and not meta.get("quality_ok", True):
        failed.append("quality")
    if spec.length and meta["length_chars"] < spec.length_threshold:
        failed.append("length")
    if spec.engagement and meta.get("engagement_count", 0) < spec.engagement_threshold:
        failed.append("engagement")
    if spec.poi and meta.get("poi_count", 0) <= poi_stats.threshold(spec.poi_bottom_fraction):
        failed.append("poi")
    return failed


def apply_filters(candidates: RankedList, spec: FilterSpec, corpus_stats: PoiPercentiles,
                  metadata_for: Callable[[str], Mapping]) -> RankedList:
    """Drop chunks whose parent document fails an enabled predicate; survivors keep their order."""
    if not spec.any_enabled:
        return candidates
    kept = [e for e in candidates if not failing_filters(metadata_for(e.chunk_id), spec, corpus_stats)]
    return candidates.renumber(kept)


# --- reranking ----------------------------------------------------------------

class PointwiseScorer(Protocol):
    def score(self, query: str, texts: Sequence[str]) -> list[float]: ...


class ListwiseRanker(Protocol):
    def order(self, query: str, items: Sequence[tuple[str, str]]) -> list[str]: ...


def _overlap(query: str, text: str) -> float:
    q = set(tokenize(query))
    if not q:
        return 0.0
    return len(q & set(tokenize(text))) / len(q)


class LexicalScorer:
    """Query-term overlap; a stand-in for a cross-encoder in offline runs."""

    def score(self, query: str, texts: Sequence[str]) -> list[float]:
        return [_overlap(query, t) for t in texts]


class LexicalListwise:
    def order(self, query: str, items: Sequence[tuple[str, str]]) -> list[str]:
        ranked = sorted(enumerate(items), key=lambda p: (-_overlap(query, p[1][1]), p[0]))
        return [cid for _, (cid, _) in ranked]


class OracleListwise:
    """Sorts each window by a known relevance key (higher first)."""

    def __init__(self, relevance: Mapping[str, float]):
        self.relevance = relevance

    def order(self, query: str, items: Sequence[tuple[str, str]]) -> list[str]:
        ranked = sorted(enumerate(items), key=lambda p: (-self.relevance.get(p[1][0], 0.0), p[0]))
        return [cid for _, (cid, _) in ranked]


class RemotePointwiseScorer:
    def __init__(self, adapter: RemoteAdapter):
        self.adapter = adapter

    def score(self, query: str, texts: Sequence[str]) -> list[float]:
        outs = self.adapter.call("rerank_score", [{"query": query, "document": t} for t in texts])
        return [float(o) for o in outs]


class RemoteListwise:
    """Listwise LLM ranking; the model answers with an ordering like ``[3] > [1] > [2]``."""

    prompt = ("Rank the passages by relevance to the query. Answer only with identifiers, "
              "most relevant first, e.g. [2] > [1].\n\nQuery: {query}\n\n{passages}")

    def __init__(self, adapter: RemoteAdapter):
        self.adapter = adapter

    def order(self, query: str, items: Sequence[tuple[str, str]]) -> list[str]:
        passages = "\n".join(f"[{i + 1}] {text}" for i, (_, text) in enumerate(items))
        (out,) = self.adapter.call("rerank_list", [self.prompt.format(query=query, passages=passages)])
        positions = out if isinstance(out, list) else [int(m) for m in re.findall(r"\[(\d+)\]", str(out))]
        return [items[int(p) - 1][0] if 0 < int(p) <= len(items) else f"?{p}" for p in positions]


def repair_permutation(returned: Sequence[str], window_ids: Sequence[str]) -> list[str]:
    """Keep valid returned ids in order, then append the missing ones in prior order."""
    valid = set(window_ids)
    out = list(dict.fromkeys(cid for cid in returned if cid in valid))
    if len(out) != len(window_ids) or len(out) != len(returned):
        logger.warning("listwise reranker returned a non-permutation; repaired")
        have = set(out)
        out += [cid for cid in window_ids if cid not in have]
    return out


def sliding_window_starts(n: int, window: int, overlap: int) -> list[int]:
    """0-based window starts, tail first."""
    if n <= window:
        return [0]
    step = window - overlap
    n_calls = math.ceil((n - window) / step) + 1
    return [max(n - window - i * step, 0) for i in range(n_calls)]


def sliding_window_rerank(query: str, ranked: RankedList, spec: RerankerSpec, ranker: ListwiseRanker,
                          text_for: Callable[[str], str], trace: list | None = None) -> RankedList:
    order = ranked.chunk_ids
    if not order:
        return ranked
    for start in sliding_window_starts(len(order), spec.window, spec.overlap):
        window = order[start:start + spec.window]
        if trace is not None:
            trace.append(("listwise", start + 1, start + len(window)))
        returned = ranker.order(query, [(cid, text_for(cid)) for cid in window])
        order[start:start + len(window)] = repair_permutation(returned, window)
    return RankedList.from_order(ranked.query_id, ranked.retriever_id, order)


def pointwise_rerank(query: str, ranked: RankedList, scorer: PointwiseScorer,
                     text_for: Callable[[str], str]) -> RankedList:
    if not len(ranked):
        return ranked
    scores = scorer.score(query, [text_for(e.chunk_id) for e in ranked])
    order = sorted(range(len(ranked)), key=lambda i: (-scores[i], i))
    return RankedList.from_order(ranked.query_id, ranked.retriever_id,
                                 [ranked.entries[i].chunk_id for i in order])


def rerank(query: str, ranked: RankedList, spec: RerankerSpec, ws: "Workspace",
           trace: list | None = None) -> RankedList:
    text_for = lambda cid: ws.chunk(cid).text  # noqa: E731
    if spec.kind == "pointwise":
        return pointwise_rerank(query, ranked, ws.scorer, text_for)
    if spec.kind == "sliding_window":
        return sliding_window_rerank(query, ranked, spec, ws.listwise, text_for, trace)
    return ranked


# --- workspace and pipeline ---------------------------------------------------

class SegmentIndex:
    """Chunks of one segmentation with their BM25 index and lazily built dense indexes."""

    def __init__(self, chunks: Sequence[Chunk], embedders: EmbedderRegistry):
        self.chunks = list(chunks)
        self.by_id = {c.id: c for c in self.chunks}
        self.bm25 = BM25Index([c.id for c in self.chunks], [c.text for c in self.chunks])
        self._embedders = embedders
        self._dense: dict[str, DenseIndex] = {}
        self._lock = threading.Lock()

    def dense(self, embedder_id: str) -> DenseIndex:
        with self._lock:
            if embedder_id not in self._dense:
                emb = self._embedders.get(embedder_id)
                vecs = np.stack([emb.embed(c.text) for c in self.chunks])
                self._dense[embedder_id] = DenseIndex([c.id for c in self.chunks], vecs)
            return self._dense[embedder_id]


class Workspace:
    """Everything a retriever needs at query time: documents, indexes and adapters.

    Indexes are built once per segmentation and read-only afterwards.
    """

    def __init__(self, documents: Sequence[Document], *, embedders: EmbedderRegistry | None = None,
                 rewriter: Rewriter | None = None, scorer: PointwiseScorer | None = None,
                 listwise: ListwiseRanker | None = None):
        self.documents = {d.id: d for d in documents}
        self.poi_stats = PoiPercentiles.from_documents(documents)
        self.embedders = embedders or EmbedderRegistry()
        self.rewriter = rewriter or TemplateRewriter()
        self.scorer = scorer or LexicalScorer()
        self.listwise = listwise or LexicalListwise()
        self._indexes: dict[SegmentationSpec, SegmentIndex] = {}
        self._chunks: dict[str, Chunk] = {}
        self._lock = threading.Lock()

    def index(self, seg: SegmentationSpec) -> SegmentIndex:
        with self._lock:
            if seg not in self._indexes:
                idx = SegmentIndex(segment_corpus(self.documents.values(), seg), self.embedders)
                self._indexes[seg] = idx
                self._chunks.update(idx.by_id)
            return self._indexes[seg]

    def chunk(self, chunk_id: str) -> Chunk:
        return self._chunks[chunk_id]

    @property
    def chunks(self) -> Mapping[str, Chunk]:
        return self._chunks

    def metadata_for(self, chunk_id: str) -> Mapping:
        return self.documents[self._chunks[chunk_id].doc_id].metadata


def _stage(name: str, fn, *args, **kwargs) -> RankedList:
    try:
        return fn(*args, **kwargs).validate()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def recall(spec: RetrieverSpec, ws: Workspace, query_id: str, text: str, depth: int,
           trace: list | None = None) -> RankedList:
    if trace is not None:
        trace.append(("recall", text, depth))
    idx = ws.index(spec.segmentation)
    dense = idx.dense(spec.embedder_id).search(
        ws.embedders.embed(spec.embedder_id, text), depth, query_id, spec.id)
    if spec.mode == "dense":
        return dense
    sparse = idx.bm25.search(text, depth, query_id, spec.id)
    return hybrid_fuse(dense, sparse, depth)


def run_retriever(spec: RetrieverSpec, query: Query, ws: Workspace, trace: list | None = None) -> RankedList:
    """Run one retriever for one query.

    ``trace``, when given, collects ``("recall", text, depth)`` and
    ``("listwise", first, last)`` events in call order.
    """
    def _recall():
        if spec.rewriter == "on":
            texts = [query.text] + rewrite_query(query.text, ws.rewriter)
            return merge_best_rank([recall(spec, ws, query.id, t, REWRITE_DEPTH, trace) for t in texts])
        return recall(spec, ws, query.id, query.text, spec.pool_multiplier * spec.k, trace)

    ranked = _stage("recall", _recall)
    ranked = _stage("filter", apply_filters, ranked, spec.filter, ws.poi_stats, ws.metadata_for)
    ranked = _stage("rerank", rerank, query.text, ranked, spec.reranker, ws, trace)
    return _stage("truncate", ranked.truncate, spec.k)

