import json
import logging
import random

import httpx
import pytest

from pooleval.adapters import RemoteAdapter
from pooleval.corpus import Document, PoiPercentiles, Query, SegmentationSpec
from pooleval.index import RankedList
from pooleval.pipeline import (FilterSpec, LLMRewriter, OracleListwise, RemoteListwise, RerankerSpec, RetrieverSpec,
                               StageError, TemplateRewriter, Workspace, apply_filters, hybrid_fuse,
                               repair_permutation, rerank, rewrite_query, run_retriever, sliding_window_rerank,
                               sliding_window_starts)


def ranked(ids, qid="q", rid="r"):
    return RankedList.from_order(qid, rid, ids)


class FixedRewriter:
    def __init__(self, out):
        self.out = out

    def rewrites(self, query):
        return list(self.out)


def test_rrf_top_in_both():
    fused = hybrid_fuse(ranked(["a", "b"]), ranked(["a", "c"]), 10)
    assert fused.chunk_ids[0] == "a"
    assert fused.entries[0].score == pytest.approx(2 / 61, abs=1e-15)
    assert round(fused.entries[0].score, 6) == 0.032787


def test_rrf_dense_only_and_empty_sparse():
    fused = hybrid_fuse(ranked(["a", "b", "c"]), ranked(["x", "y"]), 10)
    assert fused.chunk_ids[0] == "a"
    only = hybrid_fuse(ranked(["c", "a", "b"]), RankedList("q", "r", []), 2)
    assert only.chunk_ids == ["c", "a"]
    with pytest.raises(ValueError):
        hybrid_fuse(ranked(["a"], qid="q1"), ranked(["a"], qid="q2"), 5)


def test_template_rewrites_keep_words():
    out = rewrite_query("hotel refund policy", TemplateRewriter())
    assert len(out) == 4 and len(set(out)) == 4
    assert all(all(w in r for w in ("hotel", "refund", "policy")) for r in out)


def test_short_rewriter_output_is_padded(caplog):
    with caplog.at_level(logging.WARNING):
        out = rewrite_query("q text", FixedRewriter(["one", "two", "q text", ""]))
    assert out == ["one", "two", "q text", "q text"]
    assert "padding" in caplog.text


def test_llm_rewriter_parses_lines():
    def handler(request):
        return httpx.Response(200, json={"outputs": ["1. first\n2) second\n- third\nfourth"]})

    rw = LLMRewriter(RemoteAdapter("http://x", "m", transport=httpx.MockTransport(handler)))
    assert rewrite_query("orig", rw) == ["first", "second", "third", "fourth"]


def test_filters_remove_failing_docs():
    docs = [Document("short", "tiny"), Document("low", "x" * 60, metadata={"engagement_count": 10}),
            Document("bad", "y" * 60, metadata={"quality_ok": False, "engagement_count": 30}),
            Document("good", "z" * 60, metadata={"engagement_count": 30, "poi_count": 5})]
    ws = Workspace(docs)
    ws.index(SegmentationSpec("nmns"))
    cands = RankedList.from_scores("q", "r", [(f"{d.id}/nmns-100-500/0000", 1.0) for d in docs])
    stats = PoiPercentiles.from_documents(docs)
    keep = lambda spec: [c.split("/")[0] for c in apply_filters(cands, spec, stats, ws.metadata_for).chunk_ids]
    assert keep(FilterSpec()) == ["bad", "good", "low", "short"]
    assert keep(FilterSpec(length=True)) == ["bad", "good", "low"]
    assert keep(FilterSpec(engagement=True)) == ["bad", "good"]
    assert keep(FilterSpec(quality=True)) == ["good", "low", "short"]
    assert keep(FilterSpec(poi=True)) == ["good"]


def test_sliding_window_call_positions():
    assert sliding_window_starts(50, 20, 10) == [30, 20, 10, 0]
    assert sliding_window_starts(20, 20, 10) == [0]
    trace = []
    ids = [f"c{i:02d}" for i in range(50)]
    out = sliding_window_rerank("q", ranked(ids), RerankerSpec("sliding_window", 20, 10),
                                OracleListwise({}), lambda c: c, trace)
    assert trace == [("listwise", 31, 50), ("listwise", 21, 40), ("listwise", 11, 30), ("listwise", 1, 20)]
    assert out.chunk_ids == ids


def _brute_force_windows(order, key, window, overlap):
    order = list(order)
    n = len(order)
    step = window - overlap
    start = max(n - window, 0)
    while True:
        order[start:start + window] = sorted(order[start:start + window], key=lambda c: -key[c])
        if start == 0:
            return order
        start = max(start - step, 0)


def test_oracle_listwise_brings_best_to_top():
    rng = random.Random(5)
    for _ in range(20):
        ids = [f"c{i:02d}" for i in range(50)]
        rng.shuffle(ids)
        key = {c: rng.random() for c in ids}
        out = sliding_window_rerank("q", ranked(ids), RerankerSpec("sliding_window", 20, 10),
                                    OracleListwise(key), lambda c: c)
        assert out.chunk_ids[0] == max(ids, key=key.get)
        assert out.chunk_ids == _brute_force_windows(ids, key, 20, 10)
        out.validate()


def test_remote_listwise_parse_and_repair():
    def handler(request):
        return httpx.Response(200, json={"outputs": ["[3] > [1] > [9]"]})

    lw = RemoteListwise(RemoteAdapter("http://x", "m", transport=httpx.MockTransport(handler)))
    returned = lw.order("q", [("a", "A"), ("b", "B"), ("c", "C")])
    assert repair_permutation(returned, ["a", "b", "c"]) == ["c", "a", "b"]


def test_rerank_none_is_identity(small_synth):
    ws = Workspace(small_synth.documents)
    rl = ranked(["x", "y"])
    assert rerank("q", rl, RerankerSpec(), ws) is rl


@pytest.fixture(scope="module")
def ws(small_synth):
    return Workspace(small_synth.documents)


def test_rewriter_on_recall_calls(ws, small_synth):
    spec = RetrieverSpec("rw", SegmentationSpec("nms"), mode="hybrid", rewriter="on")
    trace = []
    out = run_retriever(spec, small_synth.queries[0], ws, trace)
    recalls = [t for t in trace if t[0] == "recall"]
    assert len(recalls) == 5 and all(t[2] == 10 for t in recalls)
    assert recalls[0][1] == small_synth.queries[0].text
    assert len(out) <= 20 and len(set(out.chunk_ids)) == len(out)


def test_rewriter_off_recall_depth(ws, small_synth):
    spec = RetrieverSpec("d", SegmentationSpec("nms"), mode="dense", k=50, pool_multiplier=1)
    trace = []
    q = small_synth.queries[1]
    out = run_retriever(spec, q, ws, trace)
    assert trace == [("recall", q.text, 50)]
    idx = ws.index(spec.segmentation)
    direct = idx.dense("hash-256").search(ws.embedders.embed("hash-256", q.text), 50, q.id, "d")
    assert out == direct


def test_filter_removing_everything(ws, small_synth):
    spec = RetrieverSpec("f", SegmentationSpec("nms"), filter=FilterSpec(length=True, length_threshold=10**9))
    out = run_retriever(spec, small_synth.queries[0], ws)
    assert len(out) == 0
    out.validate()


def test_pipeline_deterministic(small_synth):
    spec = RetrieverSpec("h", SegmentationSpec("original"), mode="hybrid", rewriter="on",
                         filter=FilterSpec(quality=True), reranker=RerankerSpec("sliding_window"))
    a = [run_retriever(spec, q, Workspace(small_synth.documents)) for q in small_synth.queries]
    b = [run_retriever(spec, q, Workspace(small_synth.documents)) for q in small_synth.queries]
    assert a == b


def test_stage_error_names_stage(ws, small_synth):
    class Broken:
        def score(self, query, texts):
            raise RuntimeError("boom")

    bad = Workspace(small_synth.documents, scorer=Broken())
    spec = RetrieverSpec("p", SegmentationSpec("nms"), reranker=RerankerSpec("pointwise"))
    with pytest.raises(StageError) as err:
        run_retriever(spec, small_synth.queries[0], bad)
    assert err.value.stage == "rerank"
