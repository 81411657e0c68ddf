"""Relevance judges and minimal-fact extractors.

Two families share one caching base:

* oracle judge/extractor: exact, driven by planted facts on synthetic corpora;
* LLM judge/extractor: prompt a remote model through ``RemoteAdapter``.

Verdicts and extractions are cached by content hash, so re-running an
evaluation issues no new calls.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from difflib import SequenceMatcher
from typing import Mapping, Sequence

from .adapters import AdapterError, RemoteAdapter, ResponseCache, content_key
from .corpus import Chunk, PlantedFact, Query
from .text import SENTENCE_TERMINATORS, normalize_with_map

logger = logging.getLogger(__name__)

FACT_MATCH_THRESHOLD = 0.9


@dataclass(frozen=True)
class Judgment:
    query_id: str
    chunk_id: str
    relevant: bool
    judge_id: str
    prompt_version: str

    def to_record(self) -> dict:
        return {"query_id": self.query_id, "chunk_id": self.chunk_id, "relevant": self.relevant,
                "judge_id": self.judge_id, "prompt_version": self.prompt_version}


@dataclass(frozen=True)
class Fact:
    text: str
    start: int
    end: int


@dataclass
class FactExtraction:
    query_id: str
    chunk_id: str
    facts: list[Fact] = field(default_factory=list)
    fallback: bool = False

    def to_record(self) -> dict:
        return {"query_id": self.query_id, "chunk_id": self.chunk_id, "fallback": self.fallback,
                "facts": [[f.text, f.start, f.end] for f in self.facts]}


class Unjudged(Exception):
    """The judge could not produce a usable verdict for this pair."""


def token_pattern(token: str) -> re.Pattern:
    # FACT-q3-1 must not match inside FACT-q3-10
    return re.compile(r"(?<![\w-])" + re.escape(token) + r"(?![\w-])")


class _Cached:
    """Cache plumbing shared by judges and extractors.

    ``calls`` counts cache misses, i.e. the expensive model invocations.
    """

    kind = ""

    def __init__(self, model_id: str, prompt_version: str, cache: ResponseCache | None):
        self.model_id = model_id
        self.prompt_version = prompt_version
        self.cache = cache if cache is not None else ResponseCache()
        self.calls = 0
        self._lock = threading.Lock()

    def _key(self, query: Query, chunk: Chunk) -> str:
        payload = {"query_id": query.id, "query": query.text, "chunk_id": chunk.id, "chunk": chunk.text}
        return content_key(self.kind, self.model_id, self.prompt_version, payload)

    def _cached(self, query: Query, chunk: Chunk, compute):
        key = self._key(query, chunk)
        hit = self.cache.get(key, None)
        if hit is not None:
            return hit
        with self._lock:
            self.calls += 1
        out = compute()
        self.cache.put(key, out, {"kind": self.kind, "query_id": query.id, "chunk_id": chunk.id})
        return out


class Judge(_Cached):
    kind = "judge"

    @property
    def judge_id(self) -> str:
        return self.model_id

    def judge_relevance(self, query: Query, chunk: Chunk) -> Judgment:
        """Binary relevance; raises ``Unjudged`` when no verdict could be obtained."""
        relevant = self._cached(query, chunk, lambda: self._decide(query, chunk))
        return Judgment(query.id, chunk.id, bool(relevant), self.judge_id, self.prompt_version)

    def _decide(self, query: Query, chunk: Chunk) -> bool:
        raise NotImplementedError


class OracleJudge(Judge):
    """Relevant iff the chunk contains a planted fact token of the query."""

    def __init__(self, cache: ResponseCache | None = None, facts: Mapping[str, Sequence[PlantedFact]] | None = None,
                 judge_id: str = "oracle", prompt_version: str = "oracle-v1"):
        super().__init__(judge_id, prompt_version, cache)
        self.facts = facts

    def _planted(self, query: Query) -> Sequence[PlantedFact]:
        if self.facts is not None:
            return self.facts.get(query.id, ())
        return query.facts

    def _decide(self, query: Query, chunk: Chunk) -> bool:
        return any(token_pattern(f.token).search(chunk.text) for f in self._planted(query))


class NoisyJudge(Judge):
    """Wraps a judge and flips each verdict with probability ``flip``, seeded per pair."""

    def __init__(self, inner: Judge, flip: float, seed: int = 0, cache: ResponseCache | None = None):
        super().__init__(f"{inner.judge_id}+noise{flip}-s{seed}", inner.prompt_version, cache)
        self.inner, self.flip, self.seed = inner, flip, seed

    def _decide(self, query: Query, chunk: Chunk) -> bool:
        verdict = self.inner._decide(query, chunk)
        h = hashlib.sha256(f"{self.seed}|{query.id}|{chunk.id}".encode()).digest()
        if int.from_bytes(h[:8], "little") / 2**64 < self.flip:
            return not verdict
        return verdict


_YES = re.compile(r"^\W*(yes|relevant|true)\b", re.IGNORECASE)
_NO = re.compile(r"^\W*(no|irrelevant|not relevant|false)\b", re.IGNORECASE)


def parse_verdict(text: str) -> bool | None:
    text = str(text).strip()
    if _NO.match(text):
        return False
    if _YES.match(text):
        return True
    return None


class LLMJudge(Judge):
    prompt = ("You judge search results. Does the passage contain information that helps answer "
              "the question? Answer with a single word: yes or no.\n\n"
              "Question: {query}\n\nPassage:\n{chunk}")
    repair_prompt = ("Your previous answer could not be read. Answer with exactly one word, "
                     "yes or no.\n\nQuestion: {query}\n\nPassage:\n{chunk}")

    def __init__(self, adapter: RemoteAdapter, cache: ResponseCache | None = None,
                 prompt_version: str | None = None):
        super().__init__(adapter.model, prompt_version or adapter.prompt_version, cache)
        self.adapter = adapter

    def _decide(self, query: Query, chunk: Chunk) -> bool:
        for template in (self.prompt, self.repair_prompt):
            (out,) = self.adapter.call("judge", [template.format(query=query.text, chunk=chunk.text)],
                                       use_cache=False)
            verdict = parse_verdict(out)
            if verdict is not None:
                return verdict
        raise Unjudged(f"unparseable verdict for ({query.id}, {chunk.id}): {out!r}")


# --- fact extraction ----------------------------------------------------------

def locate_fact(chunk_text: str, fact: str, threshold: float = FACT_MATCH_THRESHOLD) -> tuple[int, int] | None:
    """Span of ``fact`` in ``chunk_text`` under whitespace/case normalization.

    Exact normalized matches win; otherwise the best same-length window with
    similarity >= ``threshold`` is accepted.
    """
    norm, index = normalize_with_map(chunk_text)
    target, _ = normalize_with_map(fact)
    if not target or not norm:
        return None
    pos = norm.find(target)
    if pos < 0:
        n = len(target)
        best, best_pos = 0.0, -1
        matcher = SequenceMatcher(None, autojunk=False)
        matcher.set_seq2(target)
        for i in range(0, max(1, len(norm) - n + 1)):
            matcher.set_seq1(norm[i:i + n])
            if matcher.real_quick_ratio() < threshold or matcher.quick_ratio() < threshold:
                continue
            r = matcher.ratio()
            if r > best:
                best, best_pos = r, i
        if best < threshold:
            return None
        pos = best_pos
    end = min(pos + len(target), len(norm)) - 1
    return index[pos], index[end] + 1


def _sentence_around(text: str, start: int, end: int) -> tuple[int, int]:
    s = start
    while s > 0 and text[s - 1] not in SENTENCE_TERMINATORS and text[s - 1] != "\n":
        s -= 1
    e = end
    while e < len(text) and text[e - 1] not in SENTENCE_TERMINATORS and text[e] != "\n":
        e += 1
    while s < e and text[s].isspace():
        s += 1
    return s, e


class Extractor(_Cached):
    kind = "extract"

    def extract_minimal_facts(self, query: Query, chunk: Chunk) -> FactExtraction:
        raw = self._cached(query, chunk, lambda: self._extract(query, chunk))
        facts = []
        for text in raw:
            span = locate_fact(chunk.text, text)
            if span is None:
                logger.warning("dropping fact not found in %s: %r", chunk.id, text[:80])
                continue
            facts.append(Fact(chunk.text[span[0]:span[1]], *span))
        if not facts:
            logger.warning("no usable facts for (%s, %s); using the whole chunk", query.id, chunk.id)
            return FactExtraction(query.id, chunk.id, [Fact(chunk.text, 0, len(chunk.text))], fallback=True)
        return FactExtraction(query.id, chunk.id, facts)

    def _extract(self, query: Query, chunk: Chunk) -> list[str]:
        raise NotImplementedError


class OracleExtractor(Extractor):
    """Returns the planted fact sentences found in the chunk (or the fragment holding the token)."""

    def __init__(self, cache: ResponseCache | None = None, facts: Mapping[str, Sequence[PlantedFact]] | None = None,
                 model_id: str = "oracle", prompt_version: str = "oracle-v1"):
        super().__init__(model_id, prompt_version, cache)
        self.facts = facts

    def _extract(self, query: Query, chunk: Chunk) -> list[str]:
        planted = self.facts.get(query.id, ()) if self.facts is not None else query.facts
        out = []
        for f in planted:
            m = token_pattern(f.token).search(chunk.text)
            if not m:
                continue
            if f.sentence in chunk.text:
                out.append(f.sentence)
            else:
                s, e = _sentence_around(chunk.text, m.start(), m.end())
                out.append(chunk.text[s:e])
        return out


class LLMExtractor(Extractor):
    prompt = ("The passage below was judged relevant to the question. Copy out, verbatim, only the "
              "minimal sentences needed to answer it, dropping everything redundant. "
              "Return a JSON list of strings.\n\nQuestion: {query}\n\nPassage:\n{chunk}")

    def __init__(self, adapter: RemoteAdapter, cache: ResponseCache | None = None,
                 prompt_version: str | None = None):
        super().__init__(adapter.model, prompt_version or adapter.prompt_version, cache)
        self.adapter = adapter

    def _extract(self, query: Query, chunk: Chunk) -> list[str]:
        (out,) = self.adapter.call("extract", [self.prompt.format(query=query.text, chunk=chunk.text)],
                                   use_cache=False)
        if isinstance(out, str):
            try:
                out = json.loads(out)
            except ValueError:
                out = [line for line in out.splitlines() if line.strip()]
        if not isinstance(out, list):
            out = [out]
        return [str(x) for x in out if str(x).strip()]
