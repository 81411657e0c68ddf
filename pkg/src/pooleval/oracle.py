"""Synthetic corpora with planted facts, full-corpus ground truth, and the pooling verifier.

The verifier runs the pooled pseudo-GT pipeline and a full-knowledge-base
evaluation side by side and checks, per query and retriever:

(a) identical predicted-positive sets (TP and FP agree),
(b) zero precision delta,
(c) identical recall ordering for every retriever pair, ties included,
(d) pseudo recall >= true recall, equal exactly when nothing relevant was left
    outside the pool (or nothing was found at all),
(e) judge calls <= pool size,
(f) pooled relevance verdicts equal the true relevance of the pooled chunks.
"""

from __future__ import annotations

import itertools
import json
import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .adapters import ResponseCache
from .corpus import Chunk, Document, PlantedFact, Query, SegmentationSpec
from .index import RankedList
from .judge import Judge, NoisyJudge, OracleExtractor, OracleJudge
from .metrics import AtK, ConfusionCounts, confusion_at_k
from .pipeline import RetrieverSpec, Workspace, run_retriever
from .pseudogt import CoverageIndex, PseudoGT, build_pseudo_gt, build_subset

_TOKEN_RE = re.compile(r"(?<![\w-])FACT-q(\d+)-(\d+)(?![\w-])")
_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "pa", "do", "gu",
              "hi", "ja", "ke", "ma", "no", "pe", "qi", "ro", "su", "ta", "ve", "wo")


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    n_docs: int = 600
    n_queries: int = 50
    facts_per_query: int = 2
    fact_placements_per_fact: int = 3
    distractor_sentences_per_doc: int = 12
    sections_per_doc: tuple[int, int] = (2, 6)
    vocab_size: int = 800
    topic_leak_rate: float = 0.3
    engagement_mean: float = 60.0
    poi_mean: float = 3.0
    quality_ok_rate: float = 0.9
    # share of facts worded without any query term, so retrievers often miss them
    hidden_fact_rate: float = 0.3

    def __post_init__(self):
        for name in ("n_docs", "n_queries", "facts_per_query", "fact_placements_per_fact"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.hidden_fact_rate <= 1:
            raise ValueError("hidden_fact_rate must be in [0, 1]")
        if self.distractor_sentences_per_doc < 0:
            raise ValueError("distractor_sentences_per_doc must be >= 0")
        if self.fact_placements_per_fact > self.n_docs:
            raise ValueError("fact_placements_per_fact exceeds the number of documents")
        lo, hi = self.sections_per_doc
        if not 1 <= lo <= hi:
            raise ValueError("sections_per_doc must satisfy 1 <= lo <= hi")

    def to_record(self) -> dict:
        rec = dict(self.__dict__)
        rec["sections_per_doc"] = list(self.sections_per_doc)
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "SyntheticSpec":
        rec = dict(rec)
        if "sections_per_doc" in rec:
            rec["sections_per_doc"] = tuple(rec["sections_per_doc"])
        return cls(**rec)


def fact_token(query_index: int, fact_index: int) -> str:
    return f"FACT-q{query_index}-{fact_index}"


@dataclass
class TrueGT:
    """Complete relevance for a synthetic corpus.

    Per segmentation, every chunk is scanned for planted tokens, giving the
    exact positive set of each query.
    """

    facts: dict[str, tuple[PlantedFact, ...]]
    _hits: dict[str, dict[str, dict[str, frozenset[str]]]] = field(default_factory=dict, repr=False)
    _n_chunks: dict[str, int] = field(default_factory=dict, repr=False)

    def index_segmentation(self, segmentation_id: str, chunks: Sequence[Chunk]) -> None:
        per_query: dict[str, dict[str, set[str]]] = {}
        for c in chunks:
            for m in _TOKEN_RE.finditer(c.text):
                qid = f"q{m.group(1)}"
                per_query.setdefault(qid, {}).setdefault(c.id, set()).add(m.group(0))
        self._hits[segmentation_id] = {q: {c: frozenset(t) for c, t in d.items()} for q, d in per_query.items()}
        self._n_chunks[segmentation_id] = len(chunks)

    def _seg(self, segmentation_id: str) -> dict[str, dict[str, frozenset[str]]]:
        if segmentation_id not in self._hits:
            raise ValueError(f"segmentation {segmentation_id!r} not indexed in the true GT")
        return self._hits[segmentation_id]

    def positives(self, query_id: str, segmentation_id: str) -> frozenset[str]:
        return frozenset(self._seg(segmentation_id).get(query_id, {}))

    def tokens_in(self, query_id: str, segmentation_id: str, chunk_id: str) -> frozenset[str]:
        return self._seg(segmentation_id).get(query_id, {}).get(chunk_id, frozenset())

    def n_chunks(self, segmentation_id: str) -> int:
        self._seg(segmentation_id)
        return self._n_chunks[segmentation_id]


@dataclass
class SyntheticCorpus:
    documents: list[Document]
    queries: list[Query]
    truth: TrueGT

    def dump(self) -> str:
        """Canonical text dump (documents then queries), for determinism checks."""
        lines = [json.dumps(d.to_record(), sort_keys=True, ensure_ascii=False) for d in self.documents]
        lines += [json.dumps(q.to_record(), sort_keys=True, ensure_ascii=False) for q in self.queries]
        return "\n".join(lines) + "\n"


def _vocabulary(rng: random.Random, size: int) -> list[str]:
    words: set[str] = set()
    while len(words) < size:
        words.add("".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 4))))
    return sorted(words)


def generate_synthetic_corpus(spec: SyntheticSpec) -> SyntheticCorpus:
    rng = random.Random(spec.seed)
    nrng = np.random.default_rng(spec.seed)
    vocab = _vocabulary(rng, spec.vocab_size)

    topics = []
    for i in range(spec.n_queries):
        topics.append(rng.sample(vocab, 3))
    queries = []
    planted: dict[str, tuple[PlantedFact, ...]] = {}
    for i, topic in enumerate(topics):
        qid = f"q{i}"
        facts = []
        for j in range(1, spec.facts_per_query + 1):
            filler = rng.sample(vocab, 4)
            if rng.random() < spec.hidden_fact_rate:
                sentence = f"Clause {fact_token(i, j)} sets {filler[0]} {filler[1]} at {filler[2]} {filler[3]}."
            else:
                sentence = (f"The {topic[0]} {topic[1]} guideline {fact_token(i, j)} requires "
                            f"{filler[0]} {filler[1]} for every {topic[2]} {filler[2]}.")
            facts.append(PlantedFact(fact_token(i, j), sentence))
        planted[qid] = tuple(facts)
        queries.append(Query(qid, f"how does {topic[0]} {topic[1]} apply to {topic[2]}", tuple(facts)))

    # doc -> list of sections, each a list of sentences
    layout: list[list[list[str]]] = []
    for _ in range(spec.n_docs):
        n_sections = rng.randint(*spec.sections_per_doc)
        sections: list[list[str]] = [[] for _ in range(n_sections)]
        for s in range(spec.distractor_sentences_per_doc):
            words = rng.sample(vocab, rng.randint(6, 12))
            if rng.random() < spec.topic_leak_rate:
                words[rng.randrange(len(words))] = rng.choice(rng.choice(topics))
            sentence = " ".join(words).capitalize() + "."
            sections[s % n_sections if s < n_sections else rng.randrange(n_sections)].append(sentence)
        layout.append(sections)

    for qid in sorted(planted, key=lambda q: int(q[1:])):
        for fact in planted[qid]:
            for d in rng.sample(range(spec.n_docs), spec.fact_placements_per_fact):
                section = rng.choice(layout[d])
                section.insert(rng.randint(0, len(section)), fact.sentence)

    documents = []
    for d, sections in enumerate(layout):
        parts = []
        for s, sentences in enumerate(sections):
            heading = " ".join(rng.sample(vocab, 2)).title()
            level = 1 if s == 0 else rng.choice((2, 2, 3))
            parts.append(f"{'#' * level} {heading}\n\n" + " ".join(sentences))
        body = "\n\n".join(parts).rstrip() + "\n"
        metadata = {
            "engagement_count": int(nrng.exponential(spec.engagement_mean)),
            "poi_count": int(nrng.poisson(spec.poi_mean)),
            "quality_ok": bool(nrng.random() < spec.quality_ok_rate),
        }
        documents.append(Document(f"doc{d:05d}", body, title=parts[0].split("\n", 1)[0][2:], metadata=metadata))

    return SyntheticCorpus(documents, queries, TrueGT(planted))


def full_gt_eval(ranked: RankedList, true_gt: TrueGT, k: int, segmentation_id: str) -> AtK:
    """Evaluate against the complete positive set.

    Same rule as ``metrics.confusion_at_k``: chunk-level TP/FP, fact-level
    recall over all of the query's facts. ``counts.tn`` is the chunk-level
    true-negative count (corpus chunks minus TP, FP and missed positives).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    qid = ranked.query_id
    positives = true_gt.positives(qid, segmentation_id)
    prefix = ranked.chunk_ids[:k]
    covered: set[str] = set()
    tp = fp = 0
    for cid in prefix:
        toks = true_gt.tokens_in(qid, segmentation_id, cid)
        if toks:
            tp += 1
            covered |= toks
        else:
            fp += 1
    n_facts = len(true_gt.facts.get(qid, ()))
    fn_chunks = len(positives - set(prefix))
    tn = true_gt.n_chunks(segmentation_id) - tp - fp - fn_chunks
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = len(covered) / n_facts if n_facts else 0.0
    return AtK(ConfusionCounts(tp, fp, n_facts - len(covered), tn), len(covered), n_facts, precision, recall)


# --- verification -------------------------------------------------------------

@dataclass
class VerificationRow:
    query_id: str
    retriever_id: str
    tp_pseudo: int
    fp_pseudo: int
    tp_true: int
    fp_true: int
    facts_covered_pseudo: int
    n_facts_pseudo: int
    facts_covered_true: int
    n_facts_true: int
    fn_res: int
    fn_res_chunks: int
    tn_res: int
    same_positive_set: bool

    @property
    def precision_pseudo(self) -> Fraction:
        n = self.tp_pseudo + self.fp_pseudo
        return Fraction(self.tp_pseudo, n) if n else Fraction(0)

    @property
    def precision_true(self) -> Fraction:
        n = self.tp_true + self.fp_true
        return Fraction(self.tp_true, n) if n else Fraction(0)

    @property
    def recall_pseudo(self) -> Fraction:
        return Fraction(self.facts_covered_pseudo, self.n_facts_pseudo) if self.n_facts_pseudo else Fraction(0)

    @property
    def recall_true(self) -> Fraction:
        return Fraction(self.facts_covered_true, self.n_facts_true) if self.n_facts_true else Fraction(0)

    def to_record(self) -> dict:
        rec = dict(self.__dict__)
        rec.update(precision_pseudo=float(self.precision_pseudo), precision_true=float(self.precision_true),
                   recall_pseudo=float(self.recall_pseudo), recall_true=float(self.recall_true))
        return rec


@dataclass
class VerificationReport:
    rows: list[VerificationRow]
    failures: list[dict]
    pool_sizes: dict[str, int]
    judge_calls: dict[str, int]
    n_chunks: int
    k: int
    retriever_ids: list[str]
    asserted: bool = True
    extractor_calls: int = 0

    @property
    def status(self) -> str:
        if not self.asserted:
            return "NOT_ASSERTED"
        return "FAIL" if self.failures else "PASS"

    @property
    def passed(self) -> bool:
        return self.status != "FAIL"

    @property
    def failing_queries(self) -> list[str]:
        return sorted({f["query_id"] for f in self.failures})

    def aggregate(self) -> dict:
        rows = self.rows
        max_delta = max((abs(r.precision_pseudo - r.precision_true) for r in rows), default=Fraction(0))
        by_query: dict[str, list[VerificationRow]] = {}
        for r in rows:
            by_query.setdefault(r.query_id, []).append(r)
        agree = total = 0
        for qrows in by_query.values():
            for a, b in itertools.combinations(qrows, 2):
                total += 1
                agree += _sign(a.recall_pseudo - b.recall_pseudo) == _sign(a.recall_true - b.recall_true)
        m = len(by_query)
        total_calls = sum(self.judge_calls.values())
        return {
            "status": self.status,
            "queries": m,
            "retrievers": len(self.retriever_ids),
            "k": self.k,
            "max_precision_delta": float(max_delta),
            "recall_sign_agreement": agree / total if total else 1.0,
            "pseudo_ge_true_recall_rate": (sum(r.recall_pseudo >= r.recall_true for r in rows) / len(rows)
                                           if rows else 1.0),
            "judge_calls": total_calls,
            "pooled_chunks": sum(self.pool_sizes.values()),
            "cost_bound_sum_k": m * len(self.retriever_ids) * self.k,
            "per_retriever_cost_m_k": m * self.k,
            "full_judging_cost_m_n": m * self.n_chunks,
            "judge_cost_fraction_of_full": total_calls / (m * self.n_chunks) if m and self.n_chunks else 0.0,
            "pooled_fraction_of_full": (sum(self.pool_sizes.values()) / (m * self.n_chunks)
                                        if m and self.n_chunks else 0.0),
            "extractor_calls": self.extractor_calls,
            "failures": len(self.failures),
        }

    def to_record(self) -> dict:
        return {"aggregate": self.aggregate(), "failures": self.failures,
                "pool_sizes": self.pool_sizes, "judge_calls": self.judge_calls,
                "rows": [r.to_record() for r in self.rows]}

    def summary(self) -> str:
        agg = self.aggregate()
        lines = [
            f"verification: {agg['status']}",
            f"  queries={agg['queries']} retrievers={agg['retrievers']} k={agg['k']} corpus_chunks={self.n_chunks}",
            f"  max |precision' - precision| = {agg['max_precision_delta']:.3g}",
            f"  recall sign agreement = {agg['recall_sign_agreement']:.4f}",
            f"  pseudo recall >= true recall rate = {agg['pseudo_ge_true_recall_rate']:.4f}",
            f"  judge calls = {agg['judge_calls']} (pooled {agg['pooled_chunks']}, "
            f"{100 * agg['judge_cost_fraction_of_full']:.2f}% of M*N={agg['full_judging_cost_m_n']})",
        ]
        for f in self.failures[:20]:
            lines.append(f"  FAIL [{f['check']}] query={f['query_id']} {f.get('detail', '')}")
        if len(self.failures) > 20:
            lines.append(f"  ... {len(self.failures) - 20} more failures")
        return "\n".join(lines)


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def default_verification_specs(k: int = 20, segmentation: SegmentationSpec | None = None) -> list[RetrieverSpec]:
    """Three retrievers over one chunking: dense, hybrid, and hybrid with rewriting."""
    seg = segmentation or SegmentationSpec("nms")
    return [
        RetrieverSpec("dense-hash256", seg, mode="dense", embedder_id="hash-256", k=k),
        RetrieverSpec("hybrid-hash64", seg, mode="hybrid", embedder_id="hash-64-b", k=k),
        RetrieverSpec("hybrid-rewrite", seg, mode="hybrid", embedder_id="hash-256", k=k, rewriter="on"),
    ]


def verify_pooling(specs: Sequence[RetrieverSpec], synth: SyntheticSpec | SyntheticCorpus, k: int, *,
                      judge_cache: ResponseCache | None = None, extract_cache: ResponseCache | None = None,
                      noisy_flip: float | None = None, noise_seed: int = 0,
                      max_inflight: int = 1, judge: Judge | None = None) -> VerificationReport:
    """Run pooled pseudo-GT evaluation and full-GT evaluation and cross-check them.

    With ``noisy_flip`` set, judge verdicts are flipped at that rate and the
    report only describes divergence (status ``NOT_ASSERTED``). ``judge``
    replaces the oracle judge, e.g. to check a remote judge against the truth.
    """
    if len(specs) < 2:
        raise ValueError("pooling requires >=2 retrievers")
    segs = {s.segmentation for s in specs}
    if len(segs) != 1:
        raise ValueError("verification needs all retrievers to share one segmentation")
    seg = segs.pop()
    corpus = synth if isinstance(synth, SyntheticCorpus) else generate_synthetic_corpus(synth)

    ws = Workspace(corpus.documents)
    idx = ws.index(seg)
    corpus.truth.index_segmentation(seg.id, idx.chunks)

    if judge is None:
        judge = OracleJudge(judge_cache, facts=corpus.truth.facts)
    if noisy_flip is not None:
        judge = NoisyJudge(judge, noisy_flip, noise_seed, judge_cache)
    extractor = OracleExtractor(extract_cache, facts=corpus.truth.facts)
    coverage = CoverageIndex(ws.chunks)

    rows: list[VerificationRow] = []
    failures: list[dict] = []
    pool_sizes: dict[str, int] = {}
    judge_calls: dict[str, int] = {}

    for q in corpus.queries:
        lists = [run_retriever(s, q, ws) for s in specs]
        pool = build_subset(q.id, lists)
        gt = build_pseudo_gt(pool, judge, extractor, q, ws.chunks, max_inflight)
        pool_sizes[q.id] = pool.size
        judge_calls[q.id] = gt.judge_calls
        positives = corpus.truth.positives(q.id, seg.id)

        if gt.judge_calls > pool.size:
            failures.append({"check": "e_cost", "query_id": q.id,
                             "detail": f"{gt.judge_calls} judge calls > pool size {pool.size}"})
        if noisy_flip is None and set(gt.relevant_chunk_ids) != positives & pool.chunk_ids:
            flipped = sorted(set(gt.relevant_chunk_ids) ^ (positives & pool.chunk_ids))
            failures.append({"check": "f_judge_soundness", "query_id": q.id,
                             "detail": f"verdicts disagree with truth on {flipped[:5]}"})

        pooled_tokens = set().union(*(corpus.truth.tokens_in(q.id, seg.id, c) for c in pool.chunk_ids)) \
            if pool.chunk_ids else set()
        n_facts_true = len(corpus.truth.facts.get(q.id, ()))
        fn_res = n_facts_true - len(pooled_tokens)
        fn_res_chunks = len(positives - pool.chunk_ids)
        tn_res = corpus.truth.n_chunks(seg.id) - len(pool.chunk_ids | positives)

        qrows = []
        for spec, ranked in zip(specs, lists):
            pseudo = confusion_at_k(ranked, gt, k, coverage)
            true = full_gt_eval(ranked, corpus.truth, k, seg.id)
            prefix = ranked.chunk_ids[:k]
            pseudo_pos = {c for c in prefix if coverage.covered(c, gt.facts)}
            true_pos = {c for c in prefix if corpus.truth.tokens_in(q.id, seg.id, c)}
            row = VerificationRow(
                q.id, spec.id, pseudo.counts.tp, pseudo.counts.fp, true.counts.tp, true.counts.fp,
                pseudo.facts_covered, pseudo.n_facts, true.facts_covered, true.n_facts,
                fn_res, fn_res_chunks, tn_res, pseudo_pos == true_pos,
            )
            rows.append(row)
            qrows.append(row)
            if noisy_flip is not None:
                continue
            if not row.same_positive_set or row.tp_pseudo != row.tp_true or row.fp_pseudo != row.fp_true:
                failures.append({"check": "a_positive_sets", "query_id": q.id, "retriever": spec.id,
                                 "detail": f"TP'={row.tp_pseudo} TP={row.tp_true} FP'={row.fp_pseudo} FP={row.fp_true}"})
            if row.precision_pseudo != row.precision_true:
                failures.append({"check": "b_precision", "query_id": q.id, "retriever": spec.id,
                                 "detail": f"precision'={float(row.precision_pseudo):.4f} "
                                           f"precision={float(row.precision_true):.4f}"})
            if row.recall_pseudo < row.recall_true:
                failures.append({"check": "d_recall_bound", "query_id": q.id, "retriever": spec.id,
                                 "detail": f"recall'={float(row.recall_pseudo):.4f} < recall={float(row.recall_true):.4f}"})
            elif (row.recall_pseudo == row.recall_true) != (fn_res == 0 or row.facts_covered_true == 0):
                failures.append({"check": "d_recall_equality", "query_id": q.id, "retriever": spec.id,
                                 "detail": f"recall'={float(row.recall_pseudo):.4f} recall={float(row.recall_true):.4f} "
                                           f"fn_res={fn_res}"})

        if noisy_flip is None:
            for a, b in itertools.combinations(qrows, 2):
                same_recall = _sign(a.recall_pseudo - b.recall_pseudo) == _sign(a.recall_true - b.recall_true)
                same_tp = (_sign(a.facts_covered_pseudo - b.facts_covered_pseudo)
                           == _sign(a.facts_covered_true - b.facts_covered_true))
                if not (same_recall and same_tp):
                    failures.append({"check": "c_recall_order", "query_id": q.id,
                                     "retriever": f"{a.retriever_id} vs {b.retriever_id}",
                                     "detail": f"recall' {float(a.recall_pseudo):.3f}/{float(b.recall_pseudo):.3f} "
                                               f"recall {float(a.recall_true):.3f}/{float(b.recall_true):.3f}"})

    return VerificationReport(rows, failures, pool_sizes, judge_calls, corpus.truth.n_chunks(seg.id), k,
                              [s.id for s in specs], asserted=noisy_flip is None,
                              extractor_calls=extractor.calls)


def cross_segmentation_fixture() -> tuple[list[Document], Query, list[RetrieverSpec]]:
    """One fact, two chunkings: one yields 'redundancy A + fact', the other 'fact + redundancy B'.

    Distractor documents keep retrieval honest; each retriever returns one chunk.
    """
    red_a = ("Vendor onboarding forms are archived by the records office each quarter. "
             "Badge photos are retaken whenever a contractor changes teams.")
    fact = "Hotel refund requests FACT-q0-1 must be filed within seven days of checkout."
    red_b = ("Parking permits for the east garage renew every January. "
             "Printer toner is ordered through the facilities portal.")
    body = f"# Travel\n\n{red_a}\n\n# Refunds\n\n{fact} {red_b}\n"
    docs = [Document("policy", body)]
    fillers = [
        "Quarterly planning sessions happen in the large meeting room.",
        "The cafeteria serves breakfast until ten in the morning.",
        "New laptops are imaged by the help desk before delivery.",
    ]
    for i, text in enumerate(fillers):
        docs.append(Document(f"filler{i}", f"# Note\n\n{text}\n"))
    query = Query("q0", "hotel refund requests filed after checkout",
                  (PlantedFact("FACT-q0-1", fact),))
    # merge-then-split keeps red_a with the fact; section-only keeps the fact with red_b
    merge_len = len(red_a) + len("\n") + len(fact)
    seg_a = SegmentationSpec("original", min_merge_len=len(red_a) + 1, max_chunk_len=merge_len)
    seg_b = SegmentationSpec("nmns")
    specs = [
        RetrieverSpec("merged-split", seg_a, mode="hybrid", k=1),
        RetrieverSpec("sections", seg_b, mode="hybrid", k=1),
    ]
    return docs, query, specs
