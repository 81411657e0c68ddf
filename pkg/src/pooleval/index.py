"""Ranked lists plus exact dense and BM25 indexes over one chunking."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .text import tokenize

BM25_K1 = 1.2
BM25_B = 0.75


@dataclass(frozen=True)
class Entry:
    chunk_id: str
    score: float
    rank: int


class RankedListError(ValueError):
    pass


@dataclass
class RankedList:
    query_id: str
    retriever_id: str
    entries: list[Entry] = field(default_factory=list)

    @classmethod
    def from_scores(cls, query_id: str, retriever_id: str,
                    scored: Iterable[tuple[str, float]], k: int | None = None) -> "RankedList":
        """Sort by score desc, ties by ascending chunk id, and keep the top ``k``."""
        ordered = sorted(scored, key=lambda cs: (-cs[1], cs[0]))
        if k is not None:
            ordered = ordered[:k]
        return cls(query_id, retriever_id,
                   [Entry(cid, float(s), i + 1) for i, (cid, s) in enumerate(ordered)])

    @classmethod
    def from_order(cls, query_id: str, retriever_id: str, chunk_ids: Sequence[str]) -> "RankedList":
        """Rank-derived scores (1/rank) for lists whose order comes from a reranker."""
        return cls(query_id, retriever_id,
                   [Entry(cid, 1.0 / (i + 1), i + 1) for i, cid in enumerate(chunk_ids)])

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def chunk_ids(self) -> list[str]:
        return [e.chunk_id for e in self.entries]

    def renumber(self, kept: Sequence[Entry]) -> "RankedList":
        """Same scores, ranks recomputed 1..n over ``kept`` in the given order."""
        return RankedList(self.query_id, self.retriever_id,
                          [Entry(e.chunk_id, e.score, i + 1) for i, e in enumerate(kept)])

    def truncate(self, k: int) -> "RankedList":
        return RankedList(self.query_id, self.retriever_id, list(self.entries[:k]))

    def with_retriever(self, retriever_id: str) -> "RankedList":
        return RankedList(self.query_id, retriever_id, list(self.entries))

    def validate(self) -> "RankedList":
        seen = set()
        for i, e in enumerate(self.entries):
            if e.rank != i + 1:
                raise RankedListError(f"rank {e.rank} at position {i + 1}")
            if e.chunk_id in seen:
                raise RankedListError(f"duplicate chunk {e.chunk_id}")
            seen.add(e.chunk_id)
            if not math.isfinite(e.score):
                raise RankedListError(f"non-finite score for {e.chunk_id}")
            if i:
                prev = self.entries[i - 1]
                if e.score > prev.score or (e.score == prev.score and e.chunk_id < prev.chunk_id):
                    raise RankedListError(f"order violated at rank {e.rank}")
        return self

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "retriever_id": self.retriever_id,
            "entries": [[e.chunk_id, e.score, e.rank] for e in self.entries],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RankedList":
        return cls(rec["query_id"], rec["retriever_id"],
                   [Entry(cid, float(s), int(r)) for cid, s, r in rec["entries"]])


def _check_k(k: int) -> None:
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")


class DenseIndex:
    """Exact cosine search by full scan over unit vectors."""

    def __init__(self, chunk_ids: Sequence[str], vectors: np.ndarray):
        order = np.argsort(np.asarray(chunk_ids, dtype=object).astype(str), kind="stable")
        self.chunk_ids = [chunk_ids[i] for i in order]
        vecs = np.asarray(vectors, dtype=float)[order]
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero vector in dense index")
        self.matrix = vecs / norms

    def __len__(self) -> int:
        return len(self.chunk_ids)

    def search(self, query_vec: np.ndarray, k: int, query_id: str = "", retriever_id: str = "") -> RankedList:
        _check_k(k)
        q = np.asarray(query_vec, dtype=float)
        q = q / np.linalg.norm(q)
        scores = self.matrix @ q
        # ids are pre-sorted, so a stable sort on -score breaks ties by chunk id
        top = np.argsort(-scores, kind="stable")[:k]
        return RankedList(query_id, retriever_id,
                          [Entry(self.chunk_ids[i], float(scores[i]), r + 1) for r, i in enumerate(top)])


class BM25Index:
    def __init__(self, chunk_ids: Sequence[str], texts: Sequence[str], k1: float = BM25_K1, b: float = BM25_B):
        self.k1, self.b = k1, b
        self.chunk_ids = list(chunk_ids)
        self.doc_len = np.array([0] * len(texts), dtype=float)
        self.postings: dict[str, list[tuple[int, int]]] = defaultdict(list)
        for i, text in enumerate(texts):
            tf = Counter(tokenize(text))
            self.doc_len[i] = sum(tf.values())
            for term, n in tf.items():
                self.postings[term].append((i, n))
        self.n_docs = len(self.chunk_ids)
        self.avgdl = float(self.doc_len.mean()) if self.n_docs else 0.0

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def scores(self, query: str) -> dict[int, float]:
        acc: dict[int, float] = defaultdict(float)
        for term in dict.fromkeys(tokenize(query)):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for i, tf in plist:
                norm = self.k1 * (1 - self.b + self.b * self.doc_len[i] / self.avgdl)
                acc[i] += idf * tf * (self.k1 + 1) / (tf + norm)
        return acc

    def search(self, query: str, k: int, query_id: str = "", retriever_id: str = "") -> RankedList:
        _check_k(k)
        scored = ((self.chunk_ids[i], s) for i, s in self.scores(query).items())
        return RankedList.from_scores(query_id, retriever_id, scored, k)
