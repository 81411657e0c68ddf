"""Pooled subsets, judged pseudo ground truth and cross-segmentation fact canonicalization."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .adapters import AdapterError
from .corpus import Chunk, Query
from .index import RankedList
from .judge import Extractor, FactExtraction, Judge, Judgment, Unjudged
from .text import normalize

logger = logging.getLogger(__name__)


@dataclass
class SubsetPool:
    query_id: str
    chunk_ids: set[str]
    contributors: dict[str, set[str]]

    @property
    def size(self) -> int:
        return len(self.chunk_ids)


@dataclass(frozen=True)
class MinimalFact:
    fact_id: str
    canonical_text: str
    sources: tuple[tuple[str, int, int], ...]  # (chunk_id, start, end)

    @property
    def source_chunks(self) -> frozenset[str]:
        return frozenset(s[0] for s in self.sources)

    def to_record(self) -> dict:
        return {"fact_id": self.fact_id, "canonical_text": self.canonical_text,
                "sources": [list(s) for s in self.sources]}

    @classmethod
    def from_record(cls, rec: dict) -> "MinimalFact":
        return cls(rec["fact_id"], rec["canonical_text"], tuple((c, int(s), int(e)) for c, s, e in rec["sources"]))


@dataclass
class PseudoGT:
    query_id: str
    relevant_chunk_ids: frozenset[str]
    facts: tuple[MinimalFact, ...]
    unjudged: frozenset[str] = frozenset()
    judge_calls: int = 0
    judgments: list[Judgment] = field(default_factory=list, repr=False)
    extractions: list[FactExtraction] = field(default_factory=list, repr=False)

    @property
    def partial(self) -> bool:
        return bool(self.unjudged)

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "relevant_chunk_ids": sorted(self.relevant_chunk_ids),
            "unjudged": sorted(self.unjudged),
            "facts": [f.to_record() for f in self.facts],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PseudoGT":
        return cls(rec["query_id"], frozenset(rec["relevant_chunk_ids"]),
                   tuple(MinimalFact.from_record(f) for f in rec["facts"]), frozenset(rec.get("unjudged", ())))


def build_subset(query_id: str, results: Sequence[RankedList]) -> SubsetPool:
    """Union of every compared retriever's final list, with attribution."""
    if len(results) < 2:
        raise ValueError("pooling requires >=2 retrievers")
    ids = [r.retriever_id for r in results]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate retriever ids in pool: {ids}")
    contributors: dict[str, set[str]] = {}
    for ranked in results:
        if ranked.query_id != query_id:
            raise ValueError(f"list for {ranked.query_id!r} pooled under {query_id!r}")
        for e in ranked:
            contributors.setdefault(e.chunk_id, set()).add(ranked.retriever_id)
    return SubsetPool(query_id, set(contributors), contributors)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def fact_id_for(canonical_text: str) -> str:
    return hashlib.sha1(canonical_text.encode("utf-8")).hexdigest()[:16]


def canonicalize_facts(extractions: Iterable[FactExtraction]) -> tuple[MinimalFact, ...]:
    """Group facts whose normalized texts are equal or contain one another.

    Each group becomes one fact whose canonical text is the shortest member
    (lexicographically smallest on ties). Output is sorted by fact id.
    """
    texts: list[str] = []
    sources: list[tuple[str, int, int]] = []
    for ex in extractions:
        for f in ex.facts:
            norm = normalize(f.text)
            if norm:
                texts.append(norm)
                sources.append((ex.chunk_id, f.start, f.end))

    distinct = sorted(set(texts), key=lambda t: (len(t), t))
    uf = _UnionFind(len(distinct))
    for i, short in enumerate(distinct):
        for j in range(i + 1, len(distinct)):
            if short in distinct[j]:
                uf.union(i, j)

    pos = {t: i for i, t in enumerate(distinct)}
    groups: dict[int, set[tuple[str, int, int]]] = {}
    for text, src in zip(texts, sources):
        groups.setdefault(uf.find(pos[text]), set()).add(src)
    # roots are minimal indices, i.e. the shortest member of each group
    facts = [MinimalFact(fact_id_for(distinct[root]), distinct[root], tuple(sorted(srcs)))
             for root, srcs in groups.items()]
    return tuple(sorted(facts, key=lambda f: f.fact_id))


class CoverageIndex:
    """Memoised normalized chunk texts for repeated ``covers`` checks."""

    def __init__(self, chunks: Mapping[str, Chunk]):
        self.chunks = chunks
        self._norm: dict[str, str] = {}

    def normalized(self, chunk_id: str) -> str:
        if chunk_id not in self._norm:
            self._norm[chunk_id] = normalize(self.chunks[chunk_id].text)
        return self._norm[chunk_id]

    def covered(self, chunk_id: str, facts: Sequence[MinimalFact]) -> set[str]:
        norm = self.normalized(chunk_id)
        return {f.fact_id for f in facts if chunk_id in f.source_chunks or f.canonical_text in norm}


def covers(chunk: Chunk, fact: MinimalFact) -> bool:
    return chunk.id in fact.source_chunks or fact.canonical_text in normalize(chunk.text)


def build_pseudo_gt(pool: SubsetPool, judge: Judge, extractor: Extractor, query: Query,
                    chunks: Mapping[str, Chunk], max_inflight: int = 1) -> PseudoGT:
    """Judge every pooled chunk once, extract facts from the relevant ones, canonicalize.

    Chunks that cannot be judged are reported in ``unjudged`` and left out.
    """
    order = sorted(pool.chunk_ids)
    calls_before = judge.calls

    def _judge(cid: str) -> Judgment | None:
        try:
            return judge.judge_relevance(query, chunks[cid])
        except (Unjudged, AdapterError) as exc:
            logger.warning("unjudged (%s, %s): %s", query.id, cid, exc)
            return None

    def _extract(cid: str) -> FactExtraction:
        return extractor.extract_minimal_facts(query, chunks[cid])

    with ThreadPoolExecutor(max_workers=max(1, max_inflight)) as ex:
        verdicts = list(ex.map(_judge, order))
        judgments = [v for v in verdicts if v is not None]
        unjudged = frozenset(cid for cid, v in zip(order, verdicts) if v is None)
        relevant = [j.chunk_id for j in judgments if j.relevant]
        extractions = list(ex.map(_extract, relevant))
    return PseudoGT(
        query_id=query.id,
        relevant_chunk_ids=frozenset(relevant),
        facts=canonicalize_facts(extractions),
        unjudged=unjudged,
        judge_calls=judge.calls - calls_before,
        judgments=judgments,
        extractions=extractions,
    )
